//! Runtime validator: executes an action's model body against a bound
//! (possibly malicious) service, asserts every `requires`, updates abstract
//! state, and emits a replayable JSONL trace.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::ThreadId;

use crate::constraint::eval::{eval, eval_bool, Env, MAX_ARRAY_LEN};
use crate::exec::{assign_lvalue, bind_args, EngineError};
use crate::frontend::ast::{
    ActionDecl, ArrElem, Expr, GkType, InitAssignment, IntKind, Stmt,
};
use crate::frontend::pretty::expr_source;
use crate::frontend::typecheck::{ActionMeta, TypedModelProgram};
use crate::service::{ExternResult, ServiceBinding, ServiceError, TrustedError};
use crate::state::{StateStore, Value};

/// What to do when a constraint fails.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Policy {
    /// Stop executing the action at the first violation (default).
    Abort,
    /// Keep executing and record every failed assertion (fuzz harness use).
    Record,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViolationInfo {
    pub action: String,
    pub seq: u64,
    /// Source text of the violated constraint.
    pub constraint: String,
    /// All variable bindings at the point of failure.
    pub bindings: BTreeMap<String, Value>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Ok(Value),
    Violation(ViolationInfo),
    ModelError(String),
}

impl Verdict {
    pub fn is_ok(&self) -> bool {
        matches!(self, Verdict::Ok(_))
    }

    pub fn to_json(&self) -> serde_json::Value {
        match self {
            Verdict::Ok(v) => serde_json::json!({"outcome": "ok", "ret": v.to_json()}),
            Verdict::Violation(info) => serde_json::json!({
                "outcome": "violation",
                "action": info.action,
                "seq": info.seq,
                "constraint": info.constraint,
                "bindings": info.bindings.iter()
                    .map(|(k, v)| (k.clone(), v.to_json()))
                    .collect::<serde_json::Map<_, _>>(),
            }),
            Verdict::ModelError(msg) => {
                serde_json::json!({"outcome": "model_error", "message": msg})
            }
        }
    }
}

/// Full result of one invocation: the verdict plus every declared return
/// value and the assertions that were checked.
#[derive(Debug, Clone)]
pub struct Invocation {
    pub seq: u64,
    pub verdict: Verdict,
    /// Declared return parameters by name (e.g. read's `nread` and `buf`).
    pub outputs: BTreeMap<String, Value>,
    pub asserts: Vec<(String, bool)>,
}

struct ExternEvent {
    func: String,
    args: Vec<Value>,
    ret: i64,
    outs: Vec<Vec<i64>>,
}

pub struct ValidatorSession {
    pub program: Arc<TypedModelProgram>,
    pub state: Arc<StateStore>,
    binding: Arc<dyn ServiceBinding>,
    policy: Policy,
    trace: Option<Mutex<Box<dyn Write + Send>>>,
    seq: AtomicU64,
    /// Set for models with no atomic guards (e.g. the FS model): such
    /// sessions must stay on one thread and this is checked at runtime.
    single_threaded: bool,
    owner: Mutex<Option<ThreadId>>,
}

/// True when the model synchronizes all shared-state access itself (some
/// action contains an `atomic` block); those sessions may be driven from
/// many threads.
fn has_atomic(program: &TypedModelProgram) -> bool {
    fn in_stmts(stmts: &[Stmt]) -> bool {
        stmts.iter().any(|s| match s {
            Stmt::Atomic { .. } => true,
            Stmt::If { then, els, .. } => in_stmts(then) || in_stmts(els),
            _ => false,
        })
    }
    program.program.actions.iter().any(|a| in_stmts(&a.body))
}

/// Build the initial state for a program: the init block, then overrides,
/// in order (last assignment wins).
pub fn build_init_state(
    program: &TypedModelProgram,
    overrides: &[InitAssignment],
) -> Result<Arc<StateStore>, EngineError> {
    let state = Arc::new(StateStore::new(&program.program.maps));
    let mut vars = BTreeMap::new();
    for ia in program.program.init.iter().chain(overrides) {
        let env = Env::new(&vars, &state);
        let v = eval(&ia.value, &env)?;
        drop(env);
        assign_lvalue(&ia.target, v, &mut vars, &state)?;
    }
    Ok(state)
}

impl ValidatorSession {
    /// Create a session: initial state from the init block plus overrides,
    /// every referenced untrusted function resolved against the binding.
    pub fn init_session(
        program: Arc<TypedModelProgram>,
        binding: Arc<dyn ServiceBinding>,
        overrides: &[InitAssignment],
    ) -> Result<ValidatorSession, EngineError> {
        for meta in program.meta.values() {
            if let Some(f) = &meta.untrusted_fn {
                if !binding.supports(f) {
                    return Err(ServiceError::UnknownFunction(f.clone()).into());
                }
            }
        }
        let state = build_init_state(&program, overrides)?;
        let single_threaded = !has_atomic(&program);
        Ok(ValidatorSession {
            program,
            state,
            binding,
            policy: Policy::Abort,
            trace: None,
            seq: AtomicU64::new(0),
            single_threaded,
            owner: Mutex::new(None),
        })
    }

    pub fn with_policy(mut self, policy: Policy) -> Self {
        self.policy = policy;
        self
    }

    /// Attach a JSONL trace sink; writes the init event immediately.
    pub fn with_trace(mut self, sink: Box<dyn Write + Send>) -> Result<Self, EngineError> {
        self.trace = Some(Mutex::new(sink));
        let ev = serde_json::json!({
            "event": "init",
            "version": 1,
            "model": self.program.program.name,
            "state": self.state.snapshot().to_json(),
        });
        self.write_trace(&ev)?;
        Ok(self)
    }

    fn write_trace(&self, ev: &serde_json::Value) -> Result<(), EngineError> {
        if let Some(t) = &self.trace {
            let mut w = t.lock().unwrap();
            writeln!(w, "{ev}").map_err(|e| EngineError::Trace(e.to_string()))?;
        }
        Ok(())
    }

    fn check_thread(&self) -> Result<(), EngineError> {
        if !self.single_threaded {
            return Ok(());
        }
        let me = std::thread::current().id();
        let mut owner = self.owner.lock().unwrap();
        match *owner {
            None => {
                *owner = Some(me);
                Ok(())
            }
            Some(t) if t == me => Ok(()),
            Some(_) => Err(EngineError::SingleThreaded),
        }
    }

    /// Execute one action against the bound service.
    pub fn invoke(&self, action: &str, args: &[Value]) -> Result<Invocation, EngineError> {
        self.check_thread()?;
        let decl = self
            .program
            .program
            .action(action)
            .ok_or_else(|| EngineError::UnknownAction(action.to_string()))?;
        let meta = &self.program.meta[action];
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        let mut vars = bind_args(action, &decl.params, args)?;
        // Pre-bind declared returns so extern-call arguments referencing
        // them evaluate before the service fills them in.
        for p in &decl.returns {
            vars.entry(p.name.clone()).or_insert_with(|| Value::zero(&p.ty));
        }

        let pre_snapshot = self.trace.is_some().then(|| self.state.snapshot());

        let mut exec = Exec {
            session: self,
            decl,
            meta,
            vars,
            args: args.to_vec(),
            seq,
            extern_done: false,
            asserts: Vec::new(),
            externs: Vec::new(),
            violation: None,
        };
        let flow = exec.block(&decl.body);
        let inv = exec.finish(flow)?;

        if let Some(pre) = pre_snapshot {
            let post = self.state.snapshot();
            let mut delta = serde_json::Map::new();
            let post_json = post.to_json();
            let pre_json = pre.to_json();
            if let (Some(pre_m), Some(post_m)) = (pre_json.as_object(), post_json.as_object()) {
                for (k, v) in post_m {
                    if pre_m.get(k) != Some(v) {
                        delta.insert(k.clone(), v.clone());
                    }
                }
            }
            let mut ev = serde_json::json!({
                "seq": seq,
                "action": action,
                "args": args.iter().map(Value::to_json).collect::<Vec<_>>(),
                "extern": inv.1.iter().map(|e| serde_json::json!({
                    "fn": e.func,
                    "args": e.args.iter().map(Value::to_json).collect::<Vec<_>>(),
                    "ret": e.ret,
                    "outs": e.outs,
                })).collect::<Vec<_>>(),
                "asserts": inv.0.asserts.iter().map(|(s, ok)| serde_json::json!({
                    "src": s, "ok": ok,
                })).collect::<Vec<_>>(),
                "verdict": inv.0.verdict.to_json(),
            });
            if !delta.is_empty() {
                ev.as_object_mut()
                    .unwrap()
                    .insert("state_delta".into(), serde_json::Value::Object(delta));
            }
            self.write_trace(&ev)?;
        }
        Ok(inv.0)
    }
}

enum Flow {
    Next,
    Return(Value),
    /// Unwind after an ABORT-policy violation.
    Abort,
}

struct Exec<'s> {
    session: &'s ValidatorSession,
    decl: &'s ActionDecl,
    meta: &'s ActionMeta,
    vars: BTreeMap<String, Value>,
    args: Vec<Value>,
    seq: u64,
    extern_done: bool,
    asserts: Vec<(String, bool)>,
    externs: Vec<ExternEvent>,
    violation: Option<ViolationInfo>,
}

impl<'s> Exec<'s> {
    fn state(&self) -> &Arc<StateStore> {
        &self.session.state
    }

    fn fail(&mut self, constraint: String) -> Flow {
        self.asserts.push((constraint.clone(), false));
        if self.violation.is_none() {
            self.violation = Some(ViolationInfo {
                action: self.decl.name.clone(),
                seq: self.seq,
                constraint,
                bindings: self.vars.clone(),
            });
        }
        match self.session.policy {
            Policy::Abort => Flow::Abort,
            Policy::Record => Flow::Next,
        }
    }

    fn eval(&self, e: &Expr) -> Result<Value, EngineError> {
        let env = Env::new(&self.vars, self.state());
        Ok(eval(e, &env)?)
    }

    fn block(&mut self, stmts: &[Stmt]) -> Result<Flow, EngineError> {
        for s in stmts {
            match self.stmt(s)? {
                Flow::Next => {}
                other => return Ok(other),
            }
        }
        Ok(Flow::Next)
    }

    fn stmt(&mut self, s: &Stmt) -> Result<Flow, EngineError> {
        match s {
            Stmt::Local { name, ty, value, .. } => {
                let v = self.eval(value)?;
                let v = crate::state::coerce(&v, ty)
                    .map_err(|e| EngineError::ModelError(e.to_string()))?;
                self.vars.insert(name.clone(), v);
                Ok(Flow::Next)
            }
            Stmt::Assign { target, value, .. } => {
                let v = self.eval(value)?;
                let st = self.state().clone();
                assign_lvalue(target, v, &mut self.vars, &st)?;
                Ok(Flow::Next)
            }
            Stmt::Requires { cond, .. } => {
                // In the validator an `await requires` is evaluated once,
                // after the untrusted call: the real service did the
                // blocking, the model just checks the outcome.
                let env = Env::new(&self.vars, self.state());
                let verdict = eval_bool(cond, &env);
                drop(env);
                match verdict {
                    Ok(true) => {
                        self.asserts.push((expr_source(cond), true));
                        Ok(Flow::Next)
                    }
                    // A failed evaluation of a post-call constraint means the
                    // service returned values the model cannot even interpret
                    // (e.g. out-of-range lengths) — a violation either way.
                    Ok(false) | Err(_) => Ok(self.fail(expr_source(cond))),
                }
            }
            Stmt::Atomic { entry, body, .. } => {
                let st = self.state().clone();
                st.with_block_lock(&entry.map, || self.block(body))?
            }
            Stmt::Extern { bind, func, args, .. } => {
                self.extern_stmt(bind.as_ref(), func, args)
            }
            Stmt::If { cond, then, els, .. } => {
                let c = self.eval(cond)?;
                match c.as_bool() {
                    Some(true) => self.block(then),
                    Some(false) => self.block(els),
                    None => Err(EngineError::ModelError(format!(
                        "non-boolean condition `{}`",
                        expr_source(cond)
                    ))),
                }
            }
            Stmt::Return { value, .. } => {
                let v = match value {
                    Some(e) => self.eval(e)?,
                    None => Value::Int(IntKind::Int, 0),
                };
                if self.meta.untrusted_fn.is_some() && !self.extern_done {
                    // Shorthand: a return before the untrusted call invokes
                    // the call and checks that the service returned this
                    // exact value.
                    self.shorthand_return(v)
                } else {
                    Ok(Flow::Return(v))
                }
            }
            Stmt::Delete { entry, .. } => {
                let keys: Result<Vec<Value>, EngineError> =
                    entry.keys.iter().map(|k| self.eval(k)).collect();
                self.state().delete(&entry.map, &keys?)?;
                Ok(Flow::Next)
            }
        }
    }

    fn shorthand_return(&mut self, expected: Value) -> Result<Flow, EngineError> {
        let func = self.meta.untrusted_fn.clone().unwrap();
        let call_args = self.args.clone();
        let res = self
            .session
            .binding
            .call(&func, &call_args, self.meta.out_arrays.len())?;
        self.externs.push(ExternEvent {
            func: func.clone(),
            args: call_args,
            ret: res.ret,
            outs: res.outs,
        });
        self.extern_done = true;
        let want = expected.as_int().unwrap_or(0);
        if res.ret == want {
            self.asserts.push((format!("return == {want}"), true));
            Ok(Flow::Return(expected))
        } else {
            let flow = self.fail(format!("return == {want} (service returned {})", res.ret));
            match flow {
                Flow::Abort => Ok(Flow::Abort),
                _ => Ok(Flow::Return(expected)),
            }
        }
    }

    fn extern_stmt(
        &mut self,
        bind: Option<&crate::frontend::ast::ExternBind>,
        func: &str,
        args: &[Expr],
    ) -> Result<Flow, EngineError> {
        let arg_vals: Result<Vec<Value>, EngineError> =
            args.iter().map(|a| self.eval(a)).collect();
        let arg_vals = arg_vals?;

        if Some(func) != self.meta.untrusted_fn.as_deref() {
            // Trusted-library extern. A lexically invalid path canonicalizes
            // to "" so models can reject it with an explicit check.
            let result = match crate::service::trusted_call(func, &arg_vals) {
                Ok(v) => v,
                Err(TrustedError::InvalidPath(_)) => Value::Str(String::new()),
                Err(e) => return Err(EngineError::ModelError(e.to_string())),
            };
            if let Some(b) = bind {
                let st = self.state().clone();
                assign_lvalue(
                    &crate::frontend::ast::LValue::Var(b.name.clone()),
                    result,
                    &mut self.vars,
                    &st,
                )?;
            }
            return Ok(Flow::Next);
        }

        let res = self
            .session
            .binding
            .call(func, &arg_vals, self.meta.out_arrays.len())?;
        self.externs.push(ExternEvent {
            func: func.to_string(),
            args: arg_vals,
            ret: res.ret,
            outs: res.outs.clone(),
        });
        self.extern_done = true;
        if let Some(b) = bind {
            let kind = self.bind_kind(&b.name, b.declared_ty.as_ref());
            match Value::int(kind, res.ret as i128) {
                Ok(v) => {
                    self.vars.insert(b.name.clone(), v);
                }
                Err(_) => {
                    return Ok(self.fail(format!(
                        "{} in range of {} (service returned {})",
                        b.name,
                        kind.name(),
                        res.ret
                    )));
                }
            }
        }
        self.bind_out_arrays(&res)
    }

    fn bind_kind(&self, name: &str, declared: Option<&GkType>) -> IntKind {
        if let Some(GkType::Int(k)) = declared {
            return *k;
        }
        if let Some(Value::Int(k, _)) = self.vars.get(name) {
            return *k;
        }
        if let Some(p) = self.decl.returns.iter().find(|p| p.name == name) {
            if let GkType::Int(k) = p.ty {
                return k;
            }
        }
        IntKind::SsizeT
    }

    fn bind_out_arrays(&mut self, res: &ExternResult) -> Result<Flow, EngineError> {
        for (i, name) in self.meta.out_arrays.iter().enumerate() {
            let data = res.outs.get(i).cloned().unwrap_or_default();
            if data.len() as i64 > MAX_ARRAY_LEN {
                return Ok(self.fail(format!(
                    "output buffer `{name}` within the array size limit"
                )));
            }
            let elem = self.out_elem(name);
            self.vars.insert(name.clone(), Value::Arr(elem, data));
        }
        Ok(Flow::Next)
    }

    fn out_elem(&self, name: &str) -> ArrElem {
        let from_ty = |t: &GkType| match t {
            GkType::Array(e) => Some(*e),
            _ => None,
        };
        if let Some(Value::Arr(e, _)) = self.vars.get(name) {
            return *e;
        }
        self.decl
            .returns
            .iter()
            .chain(self.decl.params.iter())
            .find(|p| p.name == name)
            .and_then(|p| from_ty(&p.ty))
            .unwrap_or(ArrElem::Void)
    }

    fn finish(self, flow: Result<Flow, EngineError>) -> Result<(Invocation, Vec<ExternEvent>), EngineError> {
        let (verdict, outputs) = match flow {
            Err(EngineError::ModelError(msg)) => {
                (Verdict::ModelError(msg), BTreeMap::new())
            }
            Err(e) => return Err(e),
            Ok(flow) => {
                let ret = match flow {
                    Flow::Return(v) => v,
                    Flow::Next => Value::Int(IntKind::Int, 0),
                    Flow::Abort => Value::Int(IntKind::Int, 0),
                };
                let mut outputs = BTreeMap::new();
                for p in &self.decl.returns {
                    if let Some(v) = self.vars.get(&p.name) {
                        outputs.insert(p.name.clone(), v.clone());
                    }
                }
                match self.violation.clone() {
                    Some(v) => (Verdict::Violation(v), outputs),
                    None => (Verdict::Ok(ret), outputs),
                }
            }
        };
        Ok((
            Invocation {
                seq: self.seq,
                verdict,
                outputs,
                asserts: self.asserts,
            },
            self.externs,
        ))
    }
}

/// Outcome of re-running a recorded trace against the model.
#[derive(Debug)]
pub struct ReplayReport {
    pub verdicts: Vec<Verdict>,
    /// True when every replayed verdict equals the recorded one.
    pub matches: bool,
}

/// A binding that answers untrusted calls from a recorded trace.
struct TraceBinding {
    queue: Mutex<VecDeque<(String, ExternResult)>>,
}

impl ServiceBinding for TraceBinding {
    fn call(
        &self,
        func: &str,
        _args: &[Value],
        _out_arity: usize,
    ) -> Result<ExternResult, ServiceError> {
        let mut q = self.queue.lock().unwrap();
        match q.pop_front() {
            Some((f, res)) if f == func => Ok(res),
            Some((f, _)) => Err(ServiceError::BadArgs {
                func: func.to_string(),
                msg: format!("trace recorded a call to `{f}` here"),
            }),
            None => Err(ServiceError::BadArgs {
                func: func.to_string(),
                msg: "trace exhausted".to_string(),
            }),
        }
    }

    fn supports(&self, _func: &str) -> bool {
        true
    }

    fn reset(&self) {}
}

/// Re-execute a recorded trace: recorded extern results stand in for the
/// service, and each replayed verdict is compared with the recorded one.
pub fn replay(program: Arc<TypedModelProgram>, trace: &str) -> Result<ReplayReport, EngineError> {
    let corrupt = |msg: &str| EngineError::Trace(format!("corrupt trace: {msg}"));
    let mut lines = trace.lines().filter(|l| !l.trim().is_empty());
    let head: serde_json::Value = serde_json::from_str(lines.next().ok_or_else(|| corrupt("empty"))?)
        .map_err(|e| corrupt(&e.to_string()))?;
    if head.get("event").and_then(|v| v.as_str()) != Some("init") {
        return Err(corrupt("missing init event"));
    }
    if head.get("model").and_then(|v| v.as_str()) != Some(program.program.name.as_str()) {
        return Err(EngineError::Trace("trace/model version mismatch".to_string()));
    }

    // Gather recorded events up front.
    struct Event {
        action: String,
        args: Vec<Value>,
        externs: Vec<(String, ExternResult)>,
        verdict: serde_json::Value,
    }
    let mut events = Vec::new();
    for line in lines {
        let ev: serde_json::Value =
            serde_json::from_str(line).map_err(|e| corrupt(&e.to_string()))?;
        let action = ev
            .get("action")
            .and_then(|v| v.as_str())
            .ok_or_else(|| corrupt("event without action"))?
            .to_string();
        let args = ev
            .get("args")
            .and_then(|v| v.as_array())
            .ok_or_else(|| corrupt("event without args"))?
            .iter()
            .map(Value::from_json)
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| corrupt(&e.to_string()))?;
        let mut externs = Vec::new();
        for x in ev.get("extern").and_then(|v| v.as_array()).unwrap_or(&Vec::new()) {
            let func = x
                .get("fn")
                .and_then(|v| v.as_str())
                .ok_or_else(|| corrupt("extern without fn"))?
                .to_string();
            let ret = x
                .get("ret")
                .and_then(|v| v.as_i64())
                .ok_or_else(|| corrupt("extern without ret"))?;
            let outs = x
                .get("outs")
                .and_then(|v| v.as_array())
                .map(|a| {
                    a.iter()
                        .map(|row| {
                            row.as_array()
                                .map(|xs| xs.iter().filter_map(|x| x.as_i64()).collect())
                                .ok_or_else(|| corrupt("bad outs"))
                        })
                        .collect::<Result<Vec<Vec<i64>>, _>>()
                })
                .transpose()?
                .unwrap_or_default();
            externs.push((func, ExternResult { ret, outs }));
        }
        let verdict = ev
            .get("verdict")
            .cloned()
            .ok_or_else(|| corrupt("event without verdict"))?;
        events.push(Event { action, args, externs, verdict });
    }

    let binding = Arc::new(TraceBinding {
        queue: Mutex::new(events.iter().flat_map(|e| e.externs.clone()).collect()),
    });
    let session = ValidatorSession::init_session(program, binding, &[])?;
    // Restore the recorded initial state (overrides may have shaped it).
    let snap = snapshot_from_json(head.get("state").ok_or_else(|| corrupt("init without state"))?)
        .map_err(|e| corrupt(&e))?;
    session.state.restore(&snap)?;

    let mut verdicts = Vec::new();
    let mut matches = true;
    for ev in &events {
        let inv = session.invoke(&ev.action, &ev.args)?;
        if inv.verdict.to_json() != ev.verdict {
            matches = false;
        }
        verdicts.push(inv.verdict);
    }
    Ok(ReplayReport { verdicts, matches })
}

fn snapshot_from_json(j: &serde_json::Value) -> Result<crate::state::StateSnapshot, String> {
    let obj = j.as_object().ok_or("state is not an object")?;
    let mut maps = BTreeMap::new();
    for (name, rows) in obj {
        let mut entries = BTreeMap::new();
        for row in rows.as_array().ok_or("map is not an array")? {
            let keys = row
                .get("keys")
                .and_then(|v| v.as_array())
                .ok_or("row without keys")?
                .iter()
                .map(Value::from_json)
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| e.to_string())?;
            let mut rec = BTreeMap::new();
            for (f, v) in row
                .get("fields")
                .and_then(|v| v.as_object())
                .ok_or("row without fields")?
            {
                rec.insert(f.clone(), Value::from_json(v).map_err(|e| e.to_string())?);
            }
            entries.insert(keys, rec);
        }
        maps.insert(name.clone(), entries);
    }
    Ok(crate::state::StateSnapshot(maps))
}
