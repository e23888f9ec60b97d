//! A correct in-process mutex/futex service. Lock and wait calls genuinely
//! block the calling thread (condvar-based), so multi-threaded sessions
//! exercise real contention.

use std::collections::BTreeMap;
use std::sync::{Arc, Condvar, Mutex};

use crate::service::{ExternResult, ServiceBinding, ServiceError};
use crate::state::Value;

const EPERM: i64 = 1;
const EAGAIN: i64 = 11;
const EBUSY: i64 = 16;
const EEXIST: i64 = 17;
const EINVAL: i64 = 22;
const EDEADLK: i64 = 35;

const MUTEX_NORMAL: i64 = 0;
const MUTEX_ERRCHECK: i64 = 1;
const MUTEX_RECURSIVE: i64 = 2;

const FUNCS: &[&str] = &[
    "untrusted_mutex_init",
    "untrusted_mutex_lock",
    "untrusted_mutex_trylock",
    "untrusted_mutex_unlock",
    "untrusted_mutex_destroy",
    "untrusted_futex_init",
    "untrusted_futex_cmpxchg",
    "untrusted_futex_wait",
    "untrusted_futex_wake",
    "untrusted_futex_destroy",
];

#[derive(Debug, Clone, Copy)]
struct MutexRec {
    kind: i64,
    counter: i64,
    owner: i64,
}

#[derive(Debug, Clone, Copy)]
struct FutexRec {
    val: i64,
    sleepers: i64,
    tokens: i64,
}

#[derive(Debug, Default)]
struct SyncInner {
    mutexes: BTreeMap<i64, MutexRec>,
    futexes: BTreeMap<i64, FutexRec>,
}

/// The in-process correct synchronization service.
#[derive(Debug, Default)]
pub struct CorrectSync {
    inner: Mutex<SyncInner>,
    cv: Condvar,
}

/// Create a fresh correct synchronization service binding.
pub fn correct_sync() -> Arc<dyn ServiceBinding> {
    Arc::new(CorrectSync::default())
}

fn bad(func: &str, msg: &str) -> ServiceError {
    ServiceError::BadArgs { func: func.to_string(), msg: msg.to_string() }
}

fn int_arg(func: &str, args: &[Value], idx: usize) -> Result<i64, ServiceError> {
    args.get(idx)
        .ok_or_else(|| bad(func, &format!("missing integer argument {idx}")))?
        .as_int()
        .ok_or_else(|| bad(func, &format!("argument {idx} must be an integer")))
}

impl CorrectSync {
    fn mutex_lock(&self, id: i64, tid: i64) -> i64 {
        let mut guard = self.inner.lock().unwrap();
        loop {
            let Some(rec) = guard.mutexes.get_mut(&id) else {
                return -EINVAL;
            };
            if rec.counter == 0 {
                rec.counter = 1;
                rec.owner = tid;
                return 0;
            }
            if rec.owner == tid {
                match rec.kind {
                    MUTEX_RECURSIVE => {
                        rec.counter += 1;
                        return 0;
                    }
                    MUTEX_ERRCHECK => return -EDEADLK,
                    // A NORMAL mutex self-relock genuinely deadlocks; fall
                    // through to the wait below.
                    _ => {}
                }
            }
            guard = self.cv.wait(guard).unwrap();
        }
    }

    fn futex_wait(&self, id: i64, val: i64) -> i64 {
        let mut guard = self.inner.lock().unwrap();
        {
            let Some(rec) = guard.futexes.get_mut(&id) else {
                return -EINVAL;
            };
            if rec.val != val {
                return -EAGAIN;
            }
            rec.sleepers += 1;
        }
        loop {
            let Some(rec) = guard.futexes.get_mut(&id) else {
                return -EINVAL;
            };
            if rec.tokens > 0 {
                rec.tokens -= 1;
                rec.sleepers -= 1;
                return 0;
            }
            guard = self.cv.wait(guard).unwrap();
        }
    }
}

impl ServiceBinding for CorrectSync {
    fn call(
        &self,
        func: &str,
        args: &[Value],
        _out_arity: usize,
    ) -> Result<ExternResult, ServiceError> {
        let ret = match func {
            "untrusted_mutex_init" => {
                let (id, kind) = (int_arg(func, args, 0)?, int_arg(func, args, 1)?);
                let mut guard = self.inner.lock().unwrap();
                if !(0..=2).contains(&kind) {
                    -EINVAL
                } else if guard.mutexes.contains_key(&id) {
                    -EBUSY
                } else {
                    guard.mutexes.insert(id, MutexRec { kind, counter: 0, owner: 0 });
                    0
                }
            }
            "untrusted_mutex_lock" => {
                let (id, tid) = (int_arg(func, args, 0)?, int_arg(func, args, 1)?);
                self.mutex_lock(id, tid)
            }
            "untrusted_mutex_trylock" => {
                let (id, tid) = (int_arg(func, args, 0)?, int_arg(func, args, 1)?);
                let mut guard = self.inner.lock().unwrap();
                match guard.mutexes.get_mut(&id) {
                    None => -EINVAL,
                    Some(rec) if rec.counter == 0 => {
                        rec.counter = 1;
                        rec.owner = tid;
                        0
                    }
                    Some(rec) if rec.kind == MUTEX_RECURSIVE && rec.owner == tid => {
                        rec.counter += 1;
                        0
                    }
                    Some(_) => -EBUSY,
                }
            }
            "untrusted_mutex_unlock" => {
                let (id, tid) = (int_arg(func, args, 0)?, int_arg(func, args, 1)?);
                let mut guard = self.inner.lock().unwrap();
                match guard.mutexes.get_mut(&id) {
                    None => -EINVAL,
                    Some(rec) => {
                        if rec.counter == 0 || (rec.kind != MUTEX_NORMAL && rec.owner != tid) {
                            -EPERM
                        } else {
                            rec.counter -= 1;
                            if rec.counter == 0 {
                                rec.owner = 0;
                            }
                            self.cv.notify_all();
                            0
                        }
                    }
                }
            }
            "untrusted_mutex_destroy" => {
                let id = int_arg(func, args, 0)?;
                let mut guard = self.inner.lock().unwrap();
                match guard.mutexes.get(&id) {
                    None => -EINVAL,
                    Some(rec) if rec.counter > 0 => -EBUSY,
                    Some(_) => {
                        guard.mutexes.remove(&id);
                        0
                    }
                }
            }
            "untrusted_futex_init" => {
                let (id, val) = (int_arg(func, args, 0)?, int_arg(func, args, 1)?);
                let mut guard = self.inner.lock().unwrap();
                if guard.futexes.contains_key(&id) {
                    -EEXIST
                } else {
                    guard.futexes.insert(id, FutexRec { val, sleepers: 0, tokens: 0 });
                    0
                }
            }
            "untrusted_futex_cmpxchg" => {
                let (id, expected, desired) = (
                    int_arg(func, args, 0)?,
                    int_arg(func, args, 1)?,
                    int_arg(func, args, 2)?,
                );
                let mut guard = self.inner.lock().unwrap();
                match guard.futexes.get_mut(&id) {
                    None => -EINVAL,
                    Some(rec) => {
                        let old = rec.val;
                        if old == expected {
                            rec.val = desired;
                        }
                        old
                    }
                }
            }
            "untrusted_futex_wait" => {
                let (id, val) = (int_arg(func, args, 0)?, int_arg(func, args, 1)?);
                self.futex_wait(id, val)
            }
            "untrusted_futex_wake" => {
                let (id, n) = (int_arg(func, args, 0)?, int_arg(func, args, 1)?);
                let mut guard = self.inner.lock().unwrap();
                if n < 0 {
                    -EINVAL
                } else {
                    match guard.futexes.get_mut(&id) {
                        None => -EINVAL,
                        Some(rec) => {
                            let w = n.min(rec.sleepers - rec.tokens).max(0);
                            rec.tokens += w;
                            if w > 0 {
                                self.cv.notify_all();
                            }
                            w
                        }
                    }
                }
            }
            "untrusted_futex_destroy" => {
                let id = int_arg(func, args, 0)?;
                let mut guard = self.inner.lock().unwrap();
                match guard.futexes.get(&id) {
                    None => -EINVAL,
                    Some(rec) if rec.sleepers > 0 => -EBUSY,
                    Some(_) => {
                        guard.futexes.remove(&id);
                        0
                    }
                }
            }
            other => return Err(ServiceError::UnknownFunction(other.to_string())),
        };
        Ok(ExternResult::ret(ret))
    }

    fn supports(&self, func: &str) -> bool {
        FUNCS.contains(&func)
    }

    fn reset(&self) {
        *self.inner.lock().unwrap() = SyncInner::default();
        self.cv.notify_all();
    }
}
