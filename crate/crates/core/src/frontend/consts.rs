//! Built-in named constants available to every model. Error codes are used
//! with the standard negative-integer encoding (`return -EBADF`).

pub const BUILTIN_CONSTS: &[(&str, i64)] = &[
    // errno values
    ("EPERM", 1),
    ("ENOENT", 2),
    ("EBADF", 9),
    ("EAGAIN", 11),
    ("EACCES", 13),
    ("EBUSY", 16),
    ("EEXIST", 17),
    ("EISDIR", 21),
    ("EINVAL", 22),
    ("EDEADLK", 35),
    // open(2) flags
    ("O_RDONLY", 0),
    ("O_WRONLY", 1),
    ("O_RDWR", 2),
    ("O_CREAT", 64),
    ("O_TRUNC", 512),
    ("O_APPEND", 1024),
    // lseek whence
    ("SEEK_SET", 0),
    ("SEEK_CUR", 1),
    ("SEEK_END", 2),
    // access(2) modes
    ("F_OK", 0),
    ("X_OK", 1),
    ("W_OK", 2),
    ("R_OK", 4),
    // mode bits
    ("S_IFDIR", 16384),
    ("S_IRUSR", 256),
    ("S_IWUSR", 128),
    ("S_IXUSR", 64),
    // mutex kinds
    ("MUTEX_NORMAL", 0),
    ("MUTEX_ERRCHECK", 1),
    ("MUTEX_RECURSIVE", 2),
];

pub fn builtin_const(name: &str) -> Option<i64> {
    BUILTIN_CONSTS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, v)| *v)
}
