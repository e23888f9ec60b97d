//! Runtime values and the shared abstract-state store.
//!
//! All three engines (validator, mock, fuzzer) operate on the same store: a
//! set of named associative maps whose schema comes straight from the model's
//! `Map` declarations. Entries are keyed by tuples of scalar values and hold
//! one record of named fields. The store is internally synchronized so that
//! sync-style models (mutexes, futexes) can be driven from many threads.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::{Condvar, Mutex};
use std::time::Duration;

use thiserror::Error;

use crate::frontend::ast::{ArrElem, GkType, IntKind, MapDecl};

/// A concrete runtime value.
///
/// Integer payloads are stored as `i64`; every declared width (including
/// `size_t`, whose runtime range is capped to non-negative `i64`) fits. Array
/// payloads keep their element width so that equality and printing stay
/// faithful to the declaration.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
pub enum Value {
    Int(IntKind, i64),
    Str(String),
    Arr(ArrElem, Vec<i64>),
    Record(Record),
    Bool(bool),
    Null,
}

/// One map entry: field name -> value, kept sorted for deterministic output.
pub type Record = BTreeMap<String, Value>;

impl Value {
    /// Construct an integer value, checking that `v` is in range for `kind`.
    pub fn int(kind: IntKind, v: i128) -> Result<Value, StateError> {
        if kind.contains(v) {
            Ok(Value::Int(kind, v as i64))
        } else {
            Err(StateError::OutOfRange {
                kind,
                value: v.to_string(),
            })
        }
    }

    /// The integer payload, if this is an integer.
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(_, v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_bool(&self) -> Option<bool> {
        match self {
            Value::Bool(b) => Some(*b),
            _ => None,
        }
    }

    pub fn is_null(&self) -> bool {
        matches!(self, Value::Null)
    }

    /// The zero/default value for a declared type (used for never-assigned
    /// fields so that reads are total).
    pub fn zero(ty: &GkType) -> Value {
        match ty {
            GkType::Int(k) => Value::Int(*k, 0),
            GkType::Str => Value::Str(String::new()),
            GkType::Array(e) => Value::Arr(*e, Vec::new()),
            GkType::Bool => Value::Bool(false),
            GkType::Void => Value::Int(IntKind::Int, 0),
            GkType::Record(_) | GkType::Null => Value::Null,
        }
    }

    /// Deterministic JSON form (tagged, sorted keys).
    pub fn to_json(&self) -> serde_json::Value {
        use serde_json::json;
        match self {
            Value::Int(k, v) => json!({"t": "int", "k": k.name(), "v": v}),
            Value::Str(s) => json!({"t": "str", "v": s}),
            Value::Arr(e, v) => json!({"t": "arr", "k": e.name(), "v": v}),
            Value::Record(fields) => {
                let mut obj = serde_json::Map::new();
                for (name, val) in fields {
                    obj.insert(name.clone(), val.to_json());
                }
                json!({"t": "rec", "v": obj})
            }
            Value::Bool(b) => json!({"t": "bool", "v": b}),
            Value::Null => json!({"t": "null"}),
        }
    }

    /// Inverse of [`Value::to_json`].
    pub fn from_json(j: &serde_json::Value) -> Result<Value, StateError> {
        let bad = || StateError::BadSnapshot(j.to_string());
        let tag = j.get("t").and_then(|t| t.as_str()).ok_or_else(bad)?;
        match tag {
            "int" => {
                let k = j
                    .get("k")
                    .and_then(|k| k.as_str())
                    .and_then(IntKind::from_name)
                    .ok_or_else(bad)?;
                let v = j.get("v").and_then(|v| v.as_i64()).ok_or_else(bad)?;
                Ok(Value::Int(k, v))
            }
            "str" => Ok(Value::Str(
                j.get("v").and_then(|v| v.as_str()).ok_or_else(bad)?.to_string(),
            )),
            "arr" => {
                let e = match j.get("k").and_then(|k| k.as_str()) {
                    Some("void") => ArrElem::Void,
                    Some(nm) => ArrElem::Int(IntKind::from_name(nm).ok_or_else(bad)?),
                    None => return Err(bad()),
                };
                let vs = j
                    .get("v")
                    .and_then(|v| v.as_array())
                    .ok_or_else(bad)?
                    .iter()
                    .map(|x| x.as_i64().ok_or_else(bad))
                    .collect::<Result<Vec<_>, _>>()?;
                Ok(Value::Arr(e, vs))
            }
            "rec" => {
                let obj = j.get("v").and_then(|v| v.as_object()).ok_or_else(bad)?;
                let mut rec = Record::new();
                for (name, val) in obj {
                    rec.insert(name.clone(), Value::from_json(val)?);
                }
                Ok(Value::Record(rec))
            }
            "bool" => Ok(Value::Bool(
                j.get("v").and_then(|v| v.as_bool()).ok_or_else(bad)?,
            )),
            "null" => Ok(Value::Null),
            _ => Err(bad()),
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(_, v) => write!(f, "{v}"),
            Value::Str(s) => write!(f, "{s:?}"),
            Value::Arr(_, v) => {
                write!(f, "[")?;
                for (i, x) in v.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{x}")?;
                }
                write!(f, "]")
            }
            Value::Record(fields) => {
                write!(f, "{{")?;
                for (i, (name, val)) in fields.iter().enumerate() {
                    if i > 0 {
                        write!(f, ", ")?;
                    }
                    write!(f, "{name}: {val}")?;
                }
                write!(f, "}}")
            }
            Value::Bool(b) => write!(f, "{b}"),
            Value::Null => write!(f, "NULL"),
        }
    }
}

/// Errors raised by state-store operations.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum StateError {
    #[error("unknown map `{0}`")]
    UnknownMap(String),
    #[error("map `{map}` expects {expected} key(s), got {got}")]
    KeyArity { map: String, expected: usize, got: usize },
    #[error("map `{map}` has no field `{field}`")]
    UnknownField { map: String, field: String },
    #[error("value {value} out of range for {}", kind.name())]
    OutOfRange { kind: IntKind, value: String },
    #[error("type mismatch: expected {expected}, got {got}")]
    TypeMismatch { expected: String, got: String },
    #[error("malformed snapshot value: {0}")]
    BadSnapshot(String),
}

/// Coerce `v` to the declared type `ty`: integers are range-checked and
/// re-tagged with the declared width; arrays must have a compatible element
/// width; everything else must match exactly.
pub fn coerce(v: &Value, ty: &GkType) -> Result<Value, StateError> {
    let mismatch = || StateError::TypeMismatch {
        expected: format!("{ty:?}"),
        got: format!("{v:?}"),
    };
    match (v, ty) {
        (Value::Int(_, x), GkType::Int(k)) => Value::int(*k, *x as i128),
        (Value::Str(s), GkType::Str) => Ok(Value::Str(s.clone())),
        (Value::Str(s), GkType::Array(e)) if e.compatible(ArrElem::Int(IntKind::Char)) => {
            Ok(Value::Arr(*e, s.bytes().map(|b| b as i64).collect()))
        }
        (Value::Arr(ek, xs), GkType::Array(e)) => {
            if ek.compatible(*e) {
                Ok(Value::Arr(*e, xs.clone()))
            } else {
                Err(mismatch())
            }
        }
        (Value::Bool(b), GkType::Bool) => Ok(Value::Bool(*b)),
        (Value::Null, GkType::Record(_)) => Ok(Value::Null),
        (Value::Record(r), GkType::Record(_)) => Ok(Value::Record(r.clone())),
        _ => Err(mismatch()),
    }
}

struct MapInstance {
    decl: MapDecl,
    entries: Mutex<BTreeMap<Vec<Value>, Record>>,
    /// Serializes `atomic (map) { ... }` blocks for this map.
    block: Mutex<()>,
    /// Write-version counter; bumped on every mutation so that blocked
    /// `await requires` evaluations can wake on change.
    version: Mutex<u64>,
    changed: Condvar,
}

/// Deterministic, serializable copy of all map contents.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateSnapshot(pub BTreeMap<String, BTreeMap<Vec<Value>, Record>>);

impl StateSnapshot {
    pub fn to_json(&self) -> serde_json::Value {
        let mut maps = serde_json::Map::new();
        for (name, entries) in &self.0 {
            let rows: Vec<serde_json::Value> = entries
                .iter()
                .map(|(keys, rec)| {
                    let k: Vec<_> = keys.iter().map(Value::to_json).collect();
                    let mut fields = serde_json::Map::new();
                    for (fname, fval) in rec {
                        fields.insert(fname.clone(), fval.to_json());
                    }
                    serde_json::json!({"keys": k, "fields": fields})
                })
                .collect();
            maps.insert(name.clone(), serde_json::Value::Array(rows));
        }
        serde_json::Value::Object(maps)
    }
}

/// The shared abstract state: one associative map per `Map` declaration.
pub struct StateStore {
    maps: BTreeMap<String, MapInstance>,
}

impl StateStore {
    /// Create an empty store with one instance per declaration.
    pub fn new(decls: &[MapDecl]) -> StateStore {
        let maps = decls
            .iter()
            .map(|d| {
                (
                    d.name.clone(),
                    MapInstance {
                        decl: d.clone(),
                        entries: Mutex::new(BTreeMap::new()),
                        block: Mutex::new(()),
                        version: Mutex::new(0),
                        changed: Condvar::new(),
                    },
                )
            })
            .collect();
        StateStore { maps }
    }

    fn instance(&self, map: &str) -> Result<&MapInstance, StateError> {
        self.maps
            .get(map)
            .ok_or_else(|| StateError::UnknownMap(map.to_string()))
    }

    /// Declaration for a map, if present.
    pub fn decl(&self, map: &str) -> Option<&MapDecl> {
        self.maps.get(map).map(|m| &m.decl)
    }

    fn coerce_keys(inst: &MapInstance, keys: &[Value]) -> Result<Vec<Value>, StateError> {
        if keys.len() != inst.decl.keys.len() {
            return Err(StateError::KeyArity {
                map: inst.decl.name.clone(),
                expected: inst.decl.keys.len(),
                got: keys.len(),
            });
        }
        keys.iter()
            .zip(&inst.decl.keys)
            .map(|(v, p)| coerce(v, &p.ty))
            .collect()
    }

    /// Look up an entry. Returns `Value::Null` when absent, or a full record
    /// (never-assigned fields read as zero values).
    pub fn get(&self, map: &str, keys: &[Value]) -> Result<Value, StateError> {
        let inst = self.instance(map)?;
        let keys = Self::coerce_keys(inst, keys)?;
        let entries = inst.entries.lock().unwrap();
        match entries.get(&keys) {
            Some(rec) => Ok(Value::Record(rec.clone())),
            None => Ok(Value::Null),
        }
    }

    /// Assign one field, creating the entry (with zeroed siblings) if needed.
    pub fn set(
        &self,
        map: &str,
        keys: &[Value],
        field: &str,
        value: Value,
    ) -> Result<(), StateError> {
        let inst = self.instance(map)?;
        let keys = Self::coerce_keys(inst, keys)?;
        let fdecl = inst
            .decl
            .fields
            .iter()
            .find(|p| p.name == field)
            .ok_or_else(|| StateError::UnknownField {
                map: map.to_string(),
                field: field.to_string(),
            })?;
        let value = coerce(&value, &fdecl.ty)?;
        {
            let mut entries = inst.entries.lock().unwrap();
            let rec = entries.entry(keys).or_insert_with(|| {
                inst.decl
                    .fields
                    .iter()
                    .map(|p| (p.name.clone(), Value::zero(&p.ty)))
                    .collect()
            });
            rec.insert(field.to_string(), value);
        }
        self.notify(inst);
        Ok(())
    }

    /// Remove an entry (no-op when absent, mirroring `delete` semantics).
    pub fn delete(&self, map: &str, keys: &[Value]) -> Result<(), StateError> {
        let inst = self.instance(map)?;
        let keys = Self::coerce_keys(inst, keys)?;
        let removed = inst.entries.lock().unwrap().remove(&keys).is_some();
        if removed {
            self.notify(inst);
        }
        Ok(())
    }

    /// All current keys of a map, in sorted order (for quantifiers).
    pub fn keys(&self, map: &str) -> Result<Vec<Vec<Value>>, StateError> {
        let inst = self.instance(map)?;
        Ok(inst.entries.lock().unwrap().keys().cloned().collect())
    }

    fn notify(&self, inst: &MapInstance) {
        let mut v = inst.version.lock().unwrap();
        *v = v.wrapping_add(1);
        inst.changed.notify_all();
    }

    /// Current write-version of a map (pairs with [`StateStore::wait_for_change`]).
    pub fn version(&self, map: &str) -> Result<u64, StateError> {
        Ok(*self.instance(map)?.version.lock().unwrap())
    }

    /// Block until the map's write-version differs from `seen`, or the poll
    /// interval elapses. Used by blocked `await requires` re-evaluation.
    pub fn wait_for_change(&self, map: &str, seen: u64, poll: Duration) -> Result<(), StateError> {
        let inst = self.instance(map)?;
        let guard = inst.version.lock().unwrap();
        if *guard != seen {
            return Ok(());
        }
        let _ = inst.changed.wait_timeout(guard, poll).unwrap();
        Ok(())
    }

    /// Run `f` while holding the map's atomic-block lock. Other atomic blocks
    /// on the same map are serialized against this one.
    pub fn with_block_lock<T>(
        &self,
        map: &str,
        f: impl FnOnce() -> T,
    ) -> Result<T, StateError> {
        let inst = self.instance(map)?;
        let _guard = inst.block.lock().unwrap();
        Ok(f())
    }

    /// Deterministic copy of all map contents.
    pub fn snapshot(&self) -> StateSnapshot {
        let maps = self
            .maps
            .iter()
            .map(|(name, inst)| (name.clone(), inst.entries.lock().unwrap().clone()))
            .collect();
        StateSnapshot(maps)
    }

    /// Replace all map contents with a snapshot (unknown maps are an error).
    pub fn restore(&self, snap: &StateSnapshot) -> Result<(), StateError> {
        for name in snap.0.keys() {
            self.instance(name)?;
        }
        for (name, inst) in &self.maps {
            let mut entries = inst.entries.lock().unwrap();
            *entries = snap.0.get(name).cloned().unwrap_or_default();
            drop(entries);
            self.notify(inst);
        }
        Ok(())
    }

    /// Reset all maps to empty.
    pub fn clear(&self) {
        for inst in self.maps.values() {
            inst.entries.lock().unwrap().clear();
            self.notify(inst);
        }
    }
}

impl fmt::Debug for StateStore {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateStore{}", self.snapshot().to_json())
    }
}
