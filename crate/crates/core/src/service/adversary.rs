//! Adversarial service bindings: each variant wraps a correct base binding
//! and misbehaves at one well-defined trigger point, leaving every other
//! call untouched.

use std::sync::{Arc, Mutex};

use crate::service::{ExternResult, ServiceBinding, ServiceError};
use crate::state::Value;

/// Identifiers of the bundled adversarial variants, in a stable order.
pub const VARIANT_IDS: &[&str] = &[
    "FD_CONFUSION",
    "SHORT_READ_LIE",
    "WRONG_DATA",
    "PHANTOM_SUCCESS",
    "DOUBLE_LOCK_GRANT",
    "OVER_WAKE",
    "RENAME_ALIAS",
];

/// One specific way an untrusted service can lie.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdversaryVariant {
    /// The second `untrusted_open` returns the descriptor of the first.
    FdConfusion,
    /// The first successful read claims more bytes than it delivered.
    ShortReadLie,
    /// The first successful read returns corrupted bytes.
    WrongData,
    /// The first write reports error-free zero progress without storing
    /// anything.
    PhantomSuccess,
    /// The second `untrusted_mutex_lock` is granted while the lock is held.
    DoubleLockGrant,
    /// The first `untrusted_futex_wake` claims to have woken threads that
    /// were never parked.
    OverWake,
    /// The first `untrusted_rename` leaves the old name still resolving.
    RenameAlias,
}

impl AdversaryVariant {
    pub fn id(self) -> &'static str {
        match self {
            AdversaryVariant::FdConfusion => "FD_CONFUSION",
            AdversaryVariant::ShortReadLie => "SHORT_READ_LIE",
            AdversaryVariant::WrongData => "WRONG_DATA",
            AdversaryVariant::PhantomSuccess => "PHANTOM_SUCCESS",
            AdversaryVariant::DoubleLockGrant => "DOUBLE_LOCK_GRANT",
            AdversaryVariant::OverWake => "OVER_WAKE",
            AdversaryVariant::RenameAlias => "RENAME_ALIAS",
        }
    }

    pub fn from_id(id: &str) -> Option<AdversaryVariant> {
        match id {
            "FD_CONFUSION" => Some(AdversaryVariant::FdConfusion),
            "SHORT_READ_LIE" => Some(AdversaryVariant::ShortReadLie),
            "WRONG_DATA" => Some(AdversaryVariant::WrongData),
            "PHANTOM_SUCCESS" => Some(AdversaryVariant::PhantomSuccess),
            "DOUBLE_LOCK_GRANT" => Some(AdversaryVariant::DoubleLockGrant),
            "OVER_WAKE" => Some(AdversaryVariant::OverWake),
            "RENAME_ALIAS" => Some(AdversaryVariant::RenameAlias),
            _ => None,
        }
    }

    pub fn all() -> Vec<AdversaryVariant> {
        VARIANT_IDS.iter().filter_map(|id| AdversaryVariant::from_id(id)).collect()
    }
}

#[derive(Debug, Default)]
struct AdvState {
    opens: u64,
    reads: u64,
    writes: u64,
    locks: u64,
    wakes: u64,
    renames: u64,
    first_fd: Option<i64>,
    fired: bool,
}

struct Adversary {
    base: Arc<dyn ServiceBinding>,
    variant: AdversaryVariant,
    state: Mutex<AdvState>,
}

/// Wrap `base` so that it misbehaves per `variant`.
pub fn adversary(
    base: Arc<dyn ServiceBinding>,
    variant: AdversaryVariant,
) -> Arc<dyn ServiceBinding> {
    Arc::new(Adversary { base, variant, state: Mutex::new(AdvState::default()) })
}

fn int_at(args: &[Value], idx: usize) -> Option<i64> {
    args.get(idx).and_then(|v| v.as_int())
}

impl ServiceBinding for Adversary {
    fn call(
        &self,
        func: &str,
        args: &[Value],
        out_arity: usize,
    ) -> Result<ExternResult, ServiceError> {
        let mut st = self.state.lock().unwrap();
        match (self.variant, func) {
            (AdversaryVariant::FdConfusion, "untrusted_open") => {
                st.opens += 1;
                let res = self.base.call(func, args, out_arity)?;
                if st.opens == 1 && res.ret >= 0 {
                    st.first_fd = Some(res.ret);
                    return Ok(res);
                }
                if st.opens == 2 && !st.fired && res.ret >= 0 {
                    if let Some(fd) = st.first_fd {
                        st.fired = true;
                        return Ok(ExternResult { ret: fd, outs: res.outs });
                    }
                }
                Ok(res)
            }
            (AdversaryVariant::ShortReadLie, f @ ("untrusted_read" | "untrusted_pread")) => {
                st.reads += 1;
                let res = self.base.call(f, args, out_arity)?;
                if !st.fired && res.ret > 1 {
                    st.fired = true;
                    let mut outs = res.outs;
                    if let Some(buf) = outs.first_mut() {
                        let keep = (res.ret / 2) as usize;
                        buf.truncate(keep);
                    }
                    return Ok(ExternResult { ret: res.ret, outs });
                }
                Ok(res)
            }
            (AdversaryVariant::WrongData, f @ ("untrusted_read" | "untrusted_pread")) => {
                st.reads += 1;
                let res = self.base.call(f, args, out_arity)?;
                if !st.fired && res.ret > 0 {
                    st.fired = true;
                    let mut outs = res.outs;
                    if let Some(buf) = outs.first_mut() {
                        for b in buf.iter_mut() {
                            *b = !*b & 0xff;
                        }
                    }
                    return Ok(ExternResult { ret: res.ret, outs });
                }
                Ok(res)
            }
            (AdversaryVariant::PhantomSuccess, f @ ("untrusted_write" | "untrusted_pwrite")) => {
                st.writes += 1;
                if !st.fired {
                    st.fired = true;
                    // Swallow the write: report an error-free zero-progress
                    // result without touching the base service.
                    return Ok(ExternResult::ret(0));
                }
                self.base.call(f, args, out_arity)
            }
            (AdversaryVariant::DoubleLockGrant, "untrusted_mutex_lock") => {
                st.locks += 1;
                if st.locks == 2 && !st.fired {
                    st.fired = true;
                    // Grant immediately without consulting the (blocking)
                    // base service.
                    return Ok(ExternResult::ret(0));
                }
                self.base.call(func, args, out_arity)
            }
            (AdversaryVariant::OverWake, "untrusted_futex_wake") => {
                st.wakes += 1;
                if !st.fired {
                    st.fired = true;
                    let n = int_at(args, 1).unwrap_or(1).max(1);
                    return Ok(ExternResult::ret(n));
                }
                self.base.call(func, args, out_arity)
            }
            (AdversaryVariant::RenameAlias, "untrusted_rename") => {
                st.renames += 1;
                let res = self.base.call(func, args, out_arity)?;
                if !st.fired && res.ret == 0 {
                    st.fired = true;
                    // Quietly resurrect the old name so both names resolve.
                    let old = args.first().cloned().unwrap_or(Value::Str(String::new()));
                    let flags = Value::Int(crate::frontend::ast::IntKind::Int, 65);
                    let mode = Value::Int(crate::frontend::ast::IntKind::Int, 0o644);
                    if let Ok(opened) =
                        self.base.call("untrusted_open", &[old, flags, mode], 0)
                    {
                        if opened.ret >= 0 {
                            let fd = Value::Int(crate::frontend::ast::IntKind::Int, opened.ret);
                            let _ = self.base.call("untrusted_close", &[fd], 0);
                        }
                    }
                }
                Ok(res)
            }
            _ => self.base.call(func, args, out_arity),
        }
    }

    fn supports(&self, func: &str) -> bool {
        self.base.supports(func)
    }

    fn reset(&self) {
        *self.state.lock().unwrap() = AdvState::default();
        self.base.reset();
    }
}
