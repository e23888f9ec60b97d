//! Service bindings: the dispatch surface the validator drives, the trusted
//! host library, the correct in-memory services, and adversarial variants.

mod adversary;
mod correct_fs;
mod correct_sync;

pub use adversary::{adversary, AdversaryVariant, VARIANT_IDS};
pub use correct_fs::correct_fs;
pub use correct_sync::correct_sync;

use std::fmt;

use thiserror::Error;

use crate::state::Value;

/// Result of one untrusted call: the integer return plus one buffer per
/// out-array argument of the call site, in argument order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExternResult {
    pub ret: i64,
    pub outs: Vec<Vec<i64>>,
}

impl ExternResult {
    pub fn ret(ret: i64) -> ExternResult {
        ExternResult { ret, outs: Vec::new() }
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ServiceError {
    #[error("service does not implement `{0}`")]
    UnknownFunction(String),
    #[error("bad arguments for `{func}`: {msg}")]
    BadArgs { func: String, msg: String },
}

/// An in-process untrusted service the validator can bind to.
///
/// Implementations must be shareable across threads (blocking sync services
/// are driven concurrently); interior mutability is expected.
pub trait ServiceBinding: Send + Sync {
    /// Invoke one untrusted function. `out_arity` is the number of output
    /// buffers the call site expects.
    fn call(&self, func: &str, args: &[Value], out_arity: usize)
        -> Result<ExternResult, ServiceError>;

    /// Whether this binding implements the named function.
    fn supports(&self, func: &str) -> bool;

    /// Reset internal service state to its initial condition (used when a
    /// campaign re-runs a scenario from scratch).
    fn reset(&self);
}

impl fmt::Debug for dyn ServiceBinding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "<service binding>")
    }
}

/// Errors from trusted-library externs.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum TrustedError {
    #[error("unknown trusted function `{0}`")]
    Unknown(String),
    #[error("invalid path `{0}`")]
    InvalidPath(String),
    #[error("bad arguments: {0}")]
    BadArgs(String),
}

/// Purely lexical path canonicalization: make `path` absolute against `cwd`,
/// resolve `.`/`..` and duplicate separators. No symlink semantics.
pub fn trusted_canonicalize(cwd: &str, path: &str) -> Result<String, TrustedError> {
    if path.is_empty() {
        return Err(TrustedError::InvalidPath(path.to_string()));
    }
    let joined = if path.starts_with('/') {
        path.to_string()
    } else {
        format!("{}/{}", cwd.trim_end_matches('/'), path)
    };
    let mut parts: Vec<&str> = Vec::new();
    for seg in joined.split('/') {
        match seg {
            "" | "." => {}
            ".." => {
                if parts.pop().is_none() {
                    return Err(TrustedError::InvalidPath(path.to_string()));
                }
            }
            other => parts.push(other),
        }
    }
    if parts.is_empty() {
        Ok("/".to_string())
    } else {
        Ok(format!("/{}", parts.join("/")))
    }
}

/// Dispatch a trusted-library extern by name.
pub fn trusted_call(func: &str, args: &[Value]) -> Result<Value, TrustedError> {
    match func {
        "canonicalize" => {
            let bad = || TrustedError::BadArgs("canonicalize(cwd: string, path: string)".into());
            let (cwd, path) = match args {
                [Value::Str(c), Value::Str(p)] => (c, p),
                _ => return Err(bad()),
            };
            trusted_canonicalize(cwd, path).map(Value::Str)
        }
        other => Err(TrustedError::Unknown(other.to_string())),
    }
}
