//! A correct in-memory file service. It reimplements the POSIX-like
//! behaviour independently of the model interpreter so that validator and
//! service can be checked against each other.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::service::{trusted_canonicalize, ExternResult, ServiceBinding, ServiceError};
use crate::state::Value;

const ENOENT: i64 = 2;
const EBADF: i64 = 9;
const EACCES: i64 = 13;
const EEXIST: i64 = 17;
const EISDIR: i64 = 21;
const EINVAL: i64 = 22;

const O_WRONLY: i64 = 1;
const O_ACCMODE: i64 = 3;
const O_CREAT: i64 = 64;
const O_TRUNC: i64 = 512;
const O_APPEND: i64 = 1024;

const S_IFDIR: i64 = 16384;
const S_IRUSR: i64 = 256;
const S_IWUSR: i64 = 128;
const S_IXUSR: i64 = 64;

const FUNCS: &[&str] = &[
    "untrusted_open",
    "untrusted_close",
    "untrusted_read",
    "untrusted_pread",
    "untrusted_write",
    "untrusted_pwrite",
    "untrusted_lseek",
    "untrusted_unlink",
    "untrusted_fstat",
    "untrusted_lstat",
    "untrusted_access",
    "untrusted_mkdir",
    "untrusted_truncate",
    "untrusted_ftruncate",
    "untrusted_chmod",
    "untrusted_fchmod",
    "untrusted_rename",
];

#[derive(Debug, Clone)]
struct Inode {
    data: Vec<u8>,
    mode: i64,
}

impl Inode {
    fn is_dir(&self) -> bool {
        self.mode / S_IFDIR % 2 == 1
    }
}

#[derive(Debug, Clone, Copy)]
struct OpenFile {
    ino: u64,
    off: i64,
    flags: i64,
}

#[derive(Debug)]
struct FsInner {
    names: BTreeMap<String, u64>,
    inodes: BTreeMap<u64, Inode>,
    fds: BTreeMap<i64, OpenFile>,
    next_ino: u64,
    next_fd: i64,
}

impl FsInner {
    fn fresh() -> FsInner {
        let mut names = BTreeMap::new();
        let mut inodes = BTreeMap::new();
        names.insert("/".to_string(), 0);
        inodes.insert(0, Inode { data: Vec::new(), mode: S_IFDIR + 0o755 });
        FsInner { names, inodes, fds: BTreeMap::new(), next_ino: 1, next_fd: 3 }
    }

    fn resolve(&self, path: &str) -> Result<String, i64> {
        trusted_canonicalize("/", path).map_err(|_| -ENOENT)
    }

    fn lookup(&self, path: &str) -> Result<(u64, &Inode), i64> {
        let p = self.resolve(path)?;
        let ino = *self.names.get(&p).ok_or(-ENOENT)?;
        Ok((ino, &self.inodes[&ino]))
    }

    fn open(&mut self, path: &str, flags: i64, mode: i64) -> i64 {
        let p = match self.resolve(path) {
            Ok(p) => p,
            Err(e) => return e,
        };
        let creating = flags / O_CREAT % 2 == 1;
        let ino = match self.names.get(&p).copied() {
            Some(ino) => {
                if self.inodes[&ino].is_dir() && flags % 4 != 0 {
                    return -EISDIR;
                }
                if flags / O_TRUNC % 2 == 1 && flags % 4 != 0 {
                    let node = self.inodes.get_mut(&ino).unwrap();
                    node.data.clear();
                }
                ino
            }
            None => {
                if !creating {
                    return -ENOENT;
                }
                let ino = self.next_ino;
                self.next_ino += 1;
                self.inodes.insert(ino, Inode { data: Vec::new(), mode });
                self.names.insert(p, ino);
                ino
            }
        };
        let fd = self.next_fd;
        self.next_fd += 1;
        self.fds.insert(fd, OpenFile { ino, off: 0, flags });
        fd
    }

    fn read_at(&mut self, fd: i64, cnt: i64, off: Option<i64>) -> Result<(i64, Vec<i64>), i64> {
        let file = *self.fds.get(&fd).ok_or(-EBADF)?;
        if file.flags & O_ACCMODE == O_WRONLY {
            return Err(-EBADF);
        }
        if let Some(off) = off {
            if off < 0 {
                return Err(-EINVAL);
            }
        }
        let node = &self.inodes[&file.ino];
        if node.is_dir() {
            return Err(-EISDIR);
        }
        let pos = off.unwrap_or(file.off).max(0) as usize;
        let avail = node.data.len().saturating_sub(pos);
        let n = (cnt.max(0) as usize).min(avail);
        let start = pos.min(node.data.len());
        let bytes: Vec<i64> = node.data[start..start + n].iter().map(|b| *b as i64).collect();
        if off.is_none() {
            self.fds.get_mut(&fd).unwrap().off = (pos + n) as i64;
        }
        Ok((n as i64, bytes))
    }

    fn write_at(&mut self, fd: i64, cnt: i64, off: Option<i64>, buf: &[u8]) -> Result<i64, i64> {
        let file = *self.fds.get(&fd).ok_or(-EBADF)?;
        if file.flags & O_ACCMODE == 0 {
            return Err(-EBADF);
        }
        if let Some(off) = off {
            if off < 0 {
                return Err(-EINVAL);
            }
        }
        if self.inodes[&file.ino].is_dir() {
            return Err(-EISDIR);
        }
        let node = self.inodes.get_mut(&file.ino).unwrap();
        let pos = match off {
            Some(o) => o as usize,
            None if file.flags / O_APPEND % 2 == 1 => node.data.len(),
            None => file.off.max(0) as usize,
        };
        let n = cnt.max(0) as usize;
        if node.data.len() < pos + n {
            node.data.resize(pos + n, 0);
        }
        for i in 0..n {
            node.data[pos + i] = buf.get(i).copied().unwrap_or(0);
        }
        if off.is_none() {
            self.fds.get_mut(&fd).unwrap().off = (pos + n) as i64;
        }
        Ok(n as i64)
    }

    fn stat_of(&self, ino: u64) -> Vec<i64> {
        let node = &self.inodes[&ino];
        vec![node.data.len() as i64, node.mode]
    }

    fn truncate_ino(&mut self, ino: u64, length: i64) -> i64 {
        if self.inodes[&ino].is_dir() {
            return -EISDIR;
        }
        self.inodes.get_mut(&ino).unwrap().data.resize(length as usize, 0);
        0
    }
}

/// The in-process correct file service.
#[derive(Debug)]
pub struct CorrectFs {
    inner: Mutex<FsInner>,
}

/// Create a fresh correct file service binding.
pub fn correct_fs() -> Arc<dyn ServiceBinding> {
    Arc::new(CorrectFs { inner: Mutex::new(FsInner::fresh()) })
}

fn want_int(func: &str, args: &[Value], idx: usize) -> Result<i64, ServiceError> {
    match args.get(idx) {
        Some(v) => v.as_int().ok_or_else(|| ServiceError::BadArgs {
            func: func.to_string(),
            msg: format!("argument {idx} must be an integer"),
        }),
        None => Err(ServiceError::BadArgs {
            func: func.to_string(),
            msg: format!("missing integer argument {idx}"),
        }),
    }
}

fn want_str<'a>(func: &str, args: &'a [Value], idx: usize) -> Result<&'a str, ServiceError> {
    match args.get(idx) {
        Some(Value::Str(s)) => Ok(s),
        _ => Err(ServiceError::BadArgs {
            func: func.to_string(),
            msg: format!("argument {idx} must be a string"),
        }),
    }
}

fn want_bytes(func: &str, args: &[Value], idx: usize) -> Result<Vec<u8>, ServiceError> {
    match args.get(idx) {
        Some(Value::Arr(_, vals)) => Ok(vals.iter().map(|v| *v as u8).collect()),
        Some(Value::Str(s)) => Ok(s.as_bytes().to_vec()),
        _ => Err(ServiceError::BadArgs {
            func: func.to_string(),
            msg: format!("argument {idx} must be a buffer"),
        }),
    }
}

impl ServiceBinding for CorrectFs {
    fn call(
        &self,
        func: &str,
        args: &[Value],
        _out_arity: usize,
    ) -> Result<ExternResult, ServiceError> {
        let mut fs = self.inner.lock().unwrap();
        let res = match func {
            "untrusted_open" => {
                let path = want_str(func, args, 0)?;
                let flags = want_int(func, args, 1)?;
                let mode = want_int(func, args, 2)?;
                ExternResult::ret(fs.open(path, flags, mode))
            }
            "untrusted_close" => {
                let fd = want_int(func, args, 0)?;
                let ret = if fs.fds.remove(&fd).is_some() { 0 } else { -EBADF };
                ExternResult::ret(ret)
            }
            "untrusted_read" => {
                let fd = want_int(func, args, 0)?;
                let cnt = want_int(func, args, 1)?;
                match fs.read_at(fd, cnt, None) {
                    Ok((n, bytes)) => ExternResult { ret: n, outs: vec![bytes] },
                    Err(e) => ExternResult { ret: e, outs: vec![Vec::new()] },
                }
            }
            "untrusted_pread" => {
                let fd = want_int(func, args, 0)?;
                let cnt = want_int(func, args, 1)?;
                let off = want_int(func, args, 2)?;
                match fs.read_at(fd, cnt, Some(off)) {
                    Ok((n, bytes)) => ExternResult { ret: n, outs: vec![bytes] },
                    Err(e) => ExternResult { ret: e, outs: vec![Vec::new()] },
                }
            }
            "untrusted_write" => {
                let fd = want_int(func, args, 0)?;
                let cnt = want_int(func, args, 1)?;
                let buf = want_bytes(func, args, 2).unwrap_or_default();
                let ret = fs.write_at(fd, cnt, None, &buf).unwrap_or_else(|e| e);
                ExternResult::ret(ret)
            }
            "untrusted_pwrite" => {
                let fd = want_int(func, args, 0)?;
                let cnt = want_int(func, args, 1)?;
                let off = want_int(func, args, 2)?;
                let buf = want_bytes(func, args, 3).unwrap_or_default();
                let ret = fs.write_at(fd, cnt, Some(off), &buf).unwrap_or_else(|e| e);
                ExternResult::ret(ret)
            }
            "untrusted_lseek" => {
                let fd = want_int(func, args, 0)?;
                let off = want_int(func, args, 1)?;
                let whence = want_int(func, args, 2)?;
                let ret = match fs.fds.get(&fd) {
                    None => -EBADF,
                    Some(file) => {
                        if !(0..=2).contains(&whence) {
                            -EINVAL
                        } else {
                            let base = match whence {
                                0 => 0,
                                1 => file.off,
                                _ => fs.inodes[&file.ino].data.len() as i64,
                            };
                            let pos = base + off;
                            if pos < 0 {
                                -EINVAL
                            } else {
                                fs.fds.get_mut(&fd).unwrap().off = pos;
                                pos
                            }
                        }
                    }
                };
                ExternResult::ret(ret)
            }
            "untrusted_unlink" => {
                let path = want_str(func, args, 0)?;
                let ret = match fs.lookup(path) {
                    Err(e) => e,
                    Ok((_, node)) if node.is_dir() => -EISDIR,
                    Ok(_) => {
                        let p = fs.resolve(path).unwrap();
                        fs.names.remove(&p);
                        0
                    }
                };
                ExternResult::ret(ret)
            }
            "untrusted_fstat" => {
                let fd = want_int(func, args, 0)?;
                match fs.fds.get(&fd).copied() {
                    None => ExternResult { ret: -EBADF, outs: vec![Vec::new()] },
                    Some(file) => ExternResult { ret: 0, outs: vec![fs.stat_of(file.ino)] },
                }
            }
            "untrusted_lstat" => {
                let path = want_str(func, args, 0)?;
                match fs.lookup(path) {
                    Err(e) => ExternResult { ret: e, outs: vec![Vec::new()] },
                    Ok((ino, _)) => ExternResult { ret: 0, outs: vec![fs.stat_of(ino)] },
                }
            }
            "untrusted_access" => {
                let path = want_str(func, args, 0)?;
                let amode = want_int(func, args, 1)?;
                let ret = match fs.lookup(path) {
                    Err(e) => e,
                    Ok((_, node)) => {
                        let m = node.mode;
                        if (amode / 4 % 2 == 1 && m / S_IRUSR % 2 == 0)
                            || (amode / 2 % 2 == 1 && m / S_IWUSR % 2 == 0)
                            || (amode % 2 == 1 && m / S_IXUSR % 2 == 0)
                        {
                            -EACCES
                        } else {
                            0
                        }
                    }
                };
                ExternResult::ret(ret)
            }
            "untrusted_mkdir" => {
                let path = want_str(func, args, 0)?;
                let mode = want_int(func, args, 1)?;
                let ret = match fs.resolve(path) {
                    Err(e) => e,
                    Ok(p) if fs.names.contains_key(&p) => -EEXIST,
                    Ok(p) => {
                        let ino = fs.next_ino;
                        fs.next_ino += 1;
                        fs.inodes.insert(ino, Inode { data: Vec::new(), mode: S_IFDIR + mode });
                        fs.names.insert(p, ino);
                        0
                    }
                };
                ExternResult::ret(ret)
            }
            "untrusted_truncate" => {
                let path = want_str(func, args, 0)?;
                let length = want_int(func, args, 1)?;
                let ret = if length < 0 {
                    -EINVAL
                } else {
                    match fs.lookup(path) {
                        Err(e) => e,
                        Ok((ino, _)) => fs.truncate_ino(ino, length),
                    }
                };
                ExternResult::ret(ret)
            }
            "untrusted_ftruncate" => {
                let fd = want_int(func, args, 0)?;
                let length = want_int(func, args, 1)?;
                let ret = if length < 0 {
                    -EINVAL
                } else {
                    match fs.fds.get(&fd).copied() {
                        None => -EBADF,
                        Some(file) => fs.truncate_ino(file.ino, length),
                    }
                };
                ExternResult::ret(ret)
            }
            "untrusted_chmod" => {
                let path = want_str(func, args, 0)?;
                let mode = want_int(func, args, 1)?;
                let ret = match fs.lookup(path) {
                    Err(e) => e,
                    Ok((ino, node)) => {
                        let dir_bit = if node.is_dir() { S_IFDIR } else { 0 };
                        fs.inodes.get_mut(&ino).unwrap().mode = mode + dir_bit;
                        0
                    }
                };
                ExternResult::ret(ret)
            }
            "untrusted_fchmod" => {
                let fd = want_int(func, args, 0)?;
                let mode = want_int(func, args, 1)?;
                let ret = match fs.fds.get(&fd).copied() {
                    None => -EBADF,
                    Some(file) => {
                        let dir_bit = if fs.inodes[&file.ino].is_dir() { S_IFDIR } else { 0 };
                        fs.inodes.get_mut(&file.ino).unwrap().mode = mode + dir_bit;
                        0
                    }
                };
                ExternResult::ret(ret)
            }
            "untrusted_rename" => {
                let old = want_str(func, args, 0)?;
                let new = want_str(func, args, 1)?;
                let ret = match (fs.resolve(old), fs.resolve(new)) {
                    (Ok(po), Ok(pn)) => match fs.names.get(&po).copied() {
                        None => -ENOENT,
                        Some(_) if po == pn => 0,
                        Some(ino) => {
                            let dest_is_dir = fs
                                .names
                                .get(&pn)
                                .is_some_and(|i| fs.inodes[i].is_dir());
                            if dest_is_dir {
                                -EISDIR
                            } else {
                                fs.names.remove(&po);
                                fs.names.insert(pn, ino);
                                0
                            }
                        }
                    },
                    _ => -ENOENT,
                };
                ExternResult::ret(ret)
            }
            other => return Err(ServiceError::UnknownFunction(other.to_string())),
        };
        Ok(res)
    }

    fn supports(&self, func: &str) -> bool {
        FUNCS.contains(&func)
    }

    fn reset(&self) {
        *self.inner.lock().unwrap() = FsInner::fresh();
    }
}
