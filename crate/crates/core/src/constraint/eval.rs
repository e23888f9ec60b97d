//! Concrete evaluation of GKSpec expressions against a variable environment
//! and the abstract state store.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::frontend::ast::{BinOp, Expr, ExprKind, GkType, IntKind, MapRef, Quantifier, UnOp};
use crate::frontend::consts::builtin_const;
use crate::state::{StateError, StateStore, Value};

/// Hard cap on materialized array/slice lengths (1 MiB), so malicious index
/// values cannot trigger huge allocations.
pub const MAX_ARRAY_LEN: i64 = 1 << 20;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EvalError {
    #[error("unbound variable `{0}`")]
    Unbound(String),
    #[error("field access on NULL entry of map `{0}`")]
    NullDereference(String),
    #[error("index {idx} out of bounds for array of length {len}")]
    IndexOutOfBounds { idx: i64, len: usize },
    #[error("bad slice bounds [{lo}:{hi}]")]
    BadSliceBounds { lo: i64, hi: i64 },
    #[error("slice of length {0} exceeds the array size limit")]
    SliceTooLong(i64),
    #[error("division by zero")]
    DivideByZero,
    #[error("arithmetic overflow")]
    Overflow,
    #[error("type error in expression: {0}")]
    Type(String),
    #[error(transparent)]
    State(#[from] StateError),
}

/// Evaluation environment: local/param bindings plus the state store.
pub struct Env<'a> {
    pub vars: &'a BTreeMap<String, Value>,
    pub state: &'a StateStore,
}

impl<'a> Env<'a> {
    pub fn new(vars: &'a BTreeMap<String, Value>, state: &'a StateStore) -> Env<'a> {
        Env { vars, state }
    }
}

fn int_of(v: &Value) -> Result<i64, EvalError> {
    v.as_int()
        .ok_or_else(|| EvalError::Type(format!("expected integer, got {v}")))
}

fn eval_keys(r: &MapRef, env: &Env) -> Result<Vec<Value>, EvalError> {
    r.keys.iter().map(|k| eval(k, env)).collect()
}

/// Bytes of a value viewed as an array operand (arrays verbatim, strings as
/// their byte content).
fn as_elems(v: &Value) -> Option<Vec<i64>> {
    match v {
        Value::Arr(_, xs) => Some(xs.clone()),
        Value::Str(s) => Some(s.bytes().map(|b| b as i64).collect()),
        _ => None,
    }
}

fn result_kind(e: &Expr) -> IntKind {
    match &e.ty {
        Some(GkType::Int(k)) => *k,
        _ => IntKind::SsizeT,
    }
}

/// Evaluate an expression to a concrete value.
pub fn eval(e: &Expr, env: &Env) -> Result<Value, EvalError> {
    match &e.kind {
        ExprKind::IntLit(v) => {
            let v = i64::try_from(*v).map_err(|_| EvalError::Overflow)?;
            Ok(Value::Int(result_kind(e), v))
        }
        ExprKind::StrLit(s) => Ok(Value::Str(s.clone())),
        ExprKind::CharLit(c) => Ok(Value::Int(IntKind::Char, *c as i64)),
        ExprKind::BoolLit(b) => Ok(Value::Bool(*b)),
        ExprKind::Null => Ok(Value::Null),
        ExprKind::Ident(n) => {
            if let Some(v) = env.vars.get(n) {
                Ok(v.clone())
            } else if let Some(c) = builtin_const(n) {
                Ok(Value::Int(IntKind::Int, c))
            } else {
                Err(EvalError::Unbound(n.clone()))
            }
        }
        ExprKind::MapEntry(r) => {
            let keys = eval_keys(r, env)?;
            Ok(env.state.get(&r.map, &keys)?)
        }
        ExprKind::Field { entry, field } => {
            let keys = eval_keys(entry, env)?;
            match env.state.get(&entry.map, &keys)? {
                Value::Record(rec) => rec
                    .get(field)
                    .cloned()
                    .ok_or_else(|| StateError::UnknownField {
                        map: entry.map.clone(),
                        field: field.clone(),
                    }.into()),
                Value::Null => Err(EvalError::NullDereference(entry.map.clone())),
                other => Err(EvalError::Type(format!("field access on {other}"))),
            }
        }
        ExprKind::Unary { op, inner } => {
            let v = eval(inner, env)?;
            match op {
                UnOp::Neg => {
                    let x = int_of(&v)?;
                    let r = x.checked_neg().ok_or(EvalError::Overflow)?;
                    Ok(Value::Int(result_kind(e), r))
                }
                UnOp::Not => match v {
                    Value::Bool(b) => Ok(Value::Bool(!b)),
                    other => Err(EvalError::Type(format!("not applied to {other}"))),
                },
            }
        }
        ExprKind::Binary { op, lhs, rhs } => eval_binary(e, *op, lhs, rhs, env),
        ExprKind::Index { base, idx } => {
            let b = eval(base, env)?;
            let xs = as_elems(&b)
                .ok_or_else(|| EvalError::Type(format!("indexing non-array {b}")))?;
            let i = int_of(&eval(idx, env)?)?;
            if i < 0 || (i as usize) >= xs.len() {
                return Err(EvalError::IndexOutOfBounds { idx: i, len: xs.len() });
            }
            let kind = match &b {
                Value::Arr(el, _) => match el {
                    crate::frontend::ast::ArrElem::Int(k) => *k,
                    crate::frontend::ast::ArrElem::Void => IntKind::Char,
                },
                _ => IntKind::Char,
            };
            Ok(Value::Int(kind, xs[i as usize]))
        }
        ExprKind::Slice { base, lo, hi } => {
            let b = eval(base, env)?;
            let elem = match &b {
                Value::Arr(el, _) => *el,
                Value::Str(_) => crate::frontend::ast::ArrElem::Int(IntKind::Char),
                other => return Err(EvalError::Type(format!("slicing non-array {other}"))),
            };
            let xs = as_elems(&b).unwrap();
            let l = int_of(&eval(lo, env)?)?;
            let h = int_of(&eval(hi, env)?)?;
            if l < 0 || h < l {
                return Err(EvalError::BadSliceBounds { lo: l, hi: h });
            }
            if h - l > MAX_ARRAY_LEN {
                return Err(EvalError::SliceTooLong(h - l));
            }
            // Half-open [l, h); positions past the end read as zero.
            let out: Vec<i64> = (l..h)
                .map(|i| xs.get(i as usize).copied().unwrap_or(0))
                .collect();
            Ok(Value::Arr(elem, out))
        }
        ExprKind::Quant { q, var, map, body } => {
            let keys = env.state.keys(map)?;
            let mut result = matches!(q, Quantifier::Forall);
            for key in keys {
                let mut vars = env.vars.clone();
                vars.insert(var.clone(), key[0].clone());
                let inner = Env::new(&vars, env.state);
                let b = eval_bool(body, &inner)?;
                match q {
                    Quantifier::Forall if !b => {
                        result = false;
                        break;
                    }
                    Quantifier::Exists if b => {
                        result = true;
                        break;
                    }
                    _ => {}
                }
            }
            Ok(Value::Bool(result))
        }
    }
}

fn eval_binary(
    e: &Expr,
    op: BinOp,
    lhs: &Expr,
    rhs: &Expr,
    env: &Env,
) -> Result<Value, EvalError> {
    if op.is_logic() {
        // Short-circuit, so guarded NULL checks work: `x != NULL and x.f == 1`.
        let l = eval_bool(lhs, env)?;
        return Ok(Value::Bool(match op {
            BinOp::And => l && eval_bool(rhs, env)?,
            BinOp::Or => l || eval_bool(rhs, env)?,
            BinOp::Implies => !l || eval_bool(rhs, env)?,
            _ => unreachable!(),
        }));
    }
    let lv = eval(lhs, env)?;
    let rv = eval(rhs, env)?;
    if op.is_cmp() {
        return compare(op, &lv, &rv).map(Value::Bool);
    }
    // Arithmetic in i128, checked back into i64 payload range.
    let a = int_of(&lv)? as i128;
    let b = int_of(&rv)? as i128;
    let r = match op {
        BinOp::Add => a + b,
        BinOp::Sub => a - b,
        BinOp::Mul => a.checked_mul(b).ok_or(EvalError::Overflow)?,
        BinOp::Div => {
            if b == 0 {
                return Err(EvalError::DivideByZero);
            }
            a / b
        }
        BinOp::Mod => {
            if b == 0 {
                return Err(EvalError::DivideByZero);
            }
            a % b
        }
        _ => unreachable!(),
    };
    let r = i64::try_from(r).map_err(|_| EvalError::Overflow)?;
    Ok(Value::Int(result_kind(e), r))
}

fn compare(op: BinOp, lv: &Value, rv: &Value) -> Result<bool, EvalError> {
    // Equality is structural; NULL compares equal only to NULL.
    let eq = |a: &Value, b: &Value| -> Result<bool, EvalError> {
        Ok(match (a, b) {
            (Value::Int(_, x), Value::Int(_, y)) => x == y,
            (Value::Str(x), Value::Str(y)) => x == y,
            (Value::Bool(x), Value::Bool(y)) => x == y,
            (Value::Null, Value::Null) => true,
            (Value::Null, _) | (_, Value::Null) => false,
            (Value::Record(x), Value::Record(y)) => x == y,
            _ => match (as_elems(a), as_elems(b)) {
                (Some(x), Some(y)) => x == y,
                _ => {
                    return Err(EvalError::Type(format!(
                        "incomparable values {a} and {b}"
                    )))
                }
            },
        })
    };
    match op {
        BinOp::Eq => eq(lv, rv),
        BinOp::Ne => eq(lv, rv).map(|b| !b),
        _ => {
            let a = int_of(lv)? as i128;
            let b = int_of(rv)? as i128;
            Ok(match op {
                BinOp::Lt => a < b,
                BinOp::Le => a <= b,
                BinOp::Gt => a > b,
                BinOp::Ge => a >= b,
                _ => unreachable!(),
            })
        }
    }
}

/// Evaluate as a boolean (requires/conditions).
pub fn eval_bool(e: &Expr, env: &Env) -> Result<bool, EvalError> {
    match eval(e, env)? {
        Value::Bool(b) => Ok(b),
        other => Err(EvalError::Type(format!("expected boolean, got {other}"))),
    }
}

/// Evaluate a conjunction of constraints. If any conjunct is concretely
/// false the whole conjunction is false even when another conjunct fails to
/// evaluate (e.g. an out-of-range length that a prior range check already
/// rules out).
pub fn eval_conjunction(cs: &[Expr], env: &Env) -> Result<bool, EvalError> {
    let mut pending_err = None;
    for c in cs {
        match eval_bool(c, env) {
            Ok(false) => return Ok(false),
            Ok(true) => {}
            Err(e) => pending_err = Some(e),
        }
    }
    match pending_err {
        Some(e) => Err(e),
        None => Ok(true),
    }
}
