//! Interpreter support shared by the validator and the mock: errors,
//! l-value assignment, and argument handling.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::constraint::eval::{eval, Env, EvalError, MAX_ARRAY_LEN};
use crate::frontend::ast::{ArrElem, Expr, GkType, IntKind, LValue, Param};
use crate::service::ServiceError;
use crate::state::{coerce, StateError, StateStore, Value};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EngineError {
    #[error("unknown action `{0}`")]
    UnknownAction(String),
    #[error("argument mismatch for `{action}`: {msg}")]
    ArgMismatch { action: String, msg: String },
    #[error("model execution error: {0}")]
    ModelError(String),
    #[error("model is unsatisfiable at `{action}`: {msg}")]
    ModelUnsat { action: String, msg: String },
    #[error(transparent)]
    Service(#[from] ServiceError),
    #[error(transparent)]
    State(#[from] StateError),
    #[error("session is single-threaded; invoked from a second thread")]
    SingleThreaded,
    #[error("trace error: {0}")]
    Trace(String),
    #[error("fuzz domain exhausted for `{action}`: no model-violating outputs exist")]
    DomainExhausted { action: String },
}

impl From<EvalError> for EngineError {
    fn from(e: EvalError) -> EngineError {
        EngineError::ModelError(e.to_string())
    }
}

/// Bind and type-coerce invocation arguments against declared params.
pub fn bind_args(
    action: &str,
    params: &[Param],
    args: &[Value],
) -> Result<BTreeMap<String, Value>, EngineError> {
    if params.len() != args.len() {
        return Err(EngineError::ArgMismatch {
            action: action.to_string(),
            msg: format!("expected {} argument(s), got {}", params.len(), args.len()),
        });
    }
    let mut vars = BTreeMap::new();
    for (p, a) in params.iter().zip(args) {
        let v = coerce(a, &p.ty).map_err(|e| EngineError::ArgMismatch {
            action: action.to_string(),
            msg: format!("`{}`: {e}", p.name),
        })?;
        vars.insert(p.name.clone(), v);
    }
    Ok(vars)
}

/// Assign `value` to an l-value: a local variable, a map field, or an
/// index/slice of either. Index/slice writes extend the underlying array
/// with zeros as needed (bounded by the global array cap).
pub fn assign_lvalue(
    target: &LValue,
    value: Value,
    vars: &mut BTreeMap<String, Value>,
    state: &StateStore,
) -> Result<(), EngineError> {
    match target {
        LValue::Var(name) => {
            let v = match vars.get(name) {
                Some(Value::Int(k, _)) => coerce(&value, &GkType::Int(*k))?,
                _ => value,
            };
            vars.insert(name.clone(), v);
            Ok(())
        }
        LValue::MapField { entry, field } => {
            let keys = eval_keys(&entry.keys, vars, state)?;
            state.set(&entry.map, &keys, field, value)?;
            Ok(())
        }
        LValue::Index { base, idx } => {
            let env = Env::new(vars, state);
            let i = eval(idx, &env)?
                .as_int()
                .ok_or_else(|| EngineError::ModelError("non-integer index".into()))?;
            drop(env);
            let x = value
                .as_int()
                .ok_or_else(|| EngineError::ModelError("non-integer array element".into()))?;
            update_array(base, vars, state, |arr| {
                if i < 0 || i > MAX_ARRAY_LEN {
                    return Err(EngineError::ModelError(format!("index {i} out of range")));
                }
                if (i as usize) >= arr.len() {
                    arr.resize(i as usize + 1, 0);
                }
                arr[i as usize] = x;
                Ok(())
            })
        }
        LValue::Slice { base, lo, hi } => {
            let env = Env::new(vars, state);
            let l = eval(lo, &env)?
                .as_int()
                .ok_or_else(|| EngineError::ModelError("non-integer slice bound".into()))?;
            let h = eval(hi, &env)?
                .as_int()
                .ok_or_else(|| EngineError::ModelError("non-integer slice bound".into()))?;
            drop(env);
            let src: Vec<i64> = match &value {
                Value::Arr(_, xs) => xs.clone(),
                Value::Str(s) => s.bytes().map(|b| b as i64).collect(),
                other => {
                    return Err(EngineError::ModelError(format!(
                        "assigning non-array {other} to a slice"
                    )))
                }
            };
            update_array(base, vars, state, |arr| {
                if l < 0 || h < l || h > MAX_ARRAY_LEN {
                    return Err(EngineError::ModelError(format!(
                        "slice bounds [{l}:{h}] out of range"
                    )));
                }
                let (l, h) = (l as usize, h as usize);
                if h > arr.len() {
                    arr.resize(h, 0);
                }
                for (k, slot) in arr[l..h].iter_mut().enumerate() {
                    *slot = src.get(k).copied().unwrap_or(0);
                }
                Ok(())
            })
        }
    }
}

fn eval_keys(
    keys: &[Expr],
    vars: &BTreeMap<String, Value>,
    state: &StateStore,
) -> Result<Vec<Value>, EngineError> {
    let env = Env::new(vars, state);
    keys.iter()
        .map(|k| eval(k, &env).map_err(EngineError::from))
        .collect()
}

/// Read-modify-write the array behind an index/slice base l-value.
fn update_array(
    base: &LValue,
    vars: &mut BTreeMap<String, Value>,
    state: &StateStore,
    f: impl FnOnce(&mut Vec<i64>) -> Result<(), EngineError>,
) -> Result<(), EngineError> {
    match base {
        LValue::Var(name) => {
            let cur = vars.get(name).cloned().unwrap_or(Value::Arr(ArrElem::Void, Vec::new()));
            let (elem, mut xs) = explode(cur)?;
            f(&mut xs)?;
            vars.insert(name.clone(), Value::Arr(elem, xs));
            Ok(())
        }
        LValue::MapField { entry, field } => {
            let keys = eval_keys(&entry.keys, vars, state)?;
            let cur = match state.get(&entry.map, &keys)? {
                Value::Record(rec) => rec.get(field).cloned(),
                _ => None,
            };
            let decl_elem = state
                .decl(&entry.map)
                .and_then(|d| d.fields.iter().find(|p| p.name == *field))
                .and_then(|p| match &p.ty {
                    GkType::Array(e) => Some(*e),
                    _ => None,
                })
                .unwrap_or(ArrElem::Void);
            let (elem, mut xs) = match cur {
                Some(v) => explode(v)?,
                None => (decl_elem, Vec::new()),
            };
            f(&mut xs)?;
            state.set(&entry.map, &keys, field, Value::Arr(elem, xs))?;
            Ok(())
        }
        other => Err(EngineError::ModelError(format!(
            "unsupported nested l-value {other:?}"
        ))),
    }
}

fn explode(v: Value) -> Result<(ArrElem, Vec<i64>), EngineError> {
    match v {
        Value::Arr(e, xs) => Ok((e, xs)),
        Value::Str(s) => Ok((
            ArrElem::Int(IntKind::Char),
            s.bytes().map(|b| b as i64).collect(),
        )),
        other => Err(EngineError::ModelError(format!(
            "indexed assignment into non-array {other}"
        ))),
    }
}
