//! Constraint-solving mock: executes actions with no backing service by
//! synthesizing the untrusted call's outputs from the scoped constraints —
//! an executable reference implementation of the model.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::ThreadId;
use std::time::Duration;

use crate::constraint::eval::{eval, eval_bool, Env};
use crate::constraint::scope::collect_scoped_constraints;
use crate::constraint::solve::{solve, SolveMode, SolveRequest, SolveResult, Unknown};
use crate::exec::{assign_lvalue, bind_args, EngineError};
use crate::frontend::ast::{
    ActionDecl, ArrElem, BinOp, Expr, ExprKind, GkType, InitAssignment, IntKind, Stmt,
};
use crate::frontend::pretty::expr_source;
use crate::frontend::token::Span;
use crate::frontend::typecheck::{ActionMeta, TypedModelProgram};
use crate::service::TrustedError;
use crate::state::{StateStore, Value};
use crate::validator::{build_init_state, Invocation, Verdict};

/// Poll interval for blocked `await requires` re-checks (fallback to the
/// notify-on-write wakeup).
const AWAIT_POLL: Duration = Duration::from_millis(1);

pub struct MockSession {
    pub program: Arc<TypedModelProgram>,
    pub state: Arc<StateStore>,
    seed: u64,
    seq: AtomicU64,
    single_threaded: bool,
    owner: Mutex<Option<ThreadId>>,
}

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

impl MockSession {
    pub fn new(
        program: Arc<TypedModelProgram>,
        seed: u64,
        overrides: &[InitAssignment],
    ) -> Result<MockSession, EngineError> {
        let state = build_init_state(&program, overrides)?;
        let single_threaded = !has_atomic(&program);
        Ok(MockSession {
            program,
            state,
            seed,
            seq: AtomicU64::new(0),
            single_threaded,
            owner: Mutex::new(None),
        })
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

    /// Execute one action on the mock. Blocks on `await requires` until the
    /// condition is made true by another thread.
    pub fn mock_invoke(&self, action: &str, args: &[Value]) -> Result<Invocation, EngineError> {
        self.check_thread()?;
        let decl = self
            .program
            .program
            .action(action)
            .ok_or_else(|| EngineError::UnknownAction(action.to_string()))?;
        let meta = &self.program.meta[action];
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        let mut vars = bind_args(action, &decl.params, args)?;
        for p in &decl.returns {
            vars.entry(p.name.clone()).or_insert_with(|| Value::zero(&p.ty));
        }
        let mut exec = MockExec {
            session: self,
            decl,
            meta,
            vars,
            seq,
            extern_done: false,
            asserts: Vec::new(),
            capture: None,
        };
        let flow = exec.block(&decl.body)?;
        let ret = match flow {
            Flow::Return(v) => v,
            Flow::Next => Value::Int(IntKind::Int, 0),
            Flow::Blocked => {
                return Err(EngineError::ModelError(
                    "await outside an atomic block".to_string(),
                ))
            }
        };
        let mut outputs = BTreeMap::new();
        for p in &decl.returns {
            if let Some(v) = exec.vars.get(&p.name) {
                outputs.insert(p.name.clone(), v.clone());
            }
        }
        Ok(Invocation {
            seq,
            verdict: Verdict::Ok(ret),
            outputs,
            asserts: exec.asserts,
        })
    }

    /// Execute `action` up to its untrusted call and return the solver
    /// context there, without solving or mutating past the call. `None`
    /// when execution returns before reaching the call (or the action has
    /// none).
    pub fn solve_context(
        &self,
        action: &str,
        args: &[Value],
    ) -> Result<Option<SolveCtx>, EngineError> {
        self.check_thread()?;
        let decl = self
            .program
            .program
            .action(action)
            .ok_or_else(|| EngineError::UnknownAction(action.to_string()))?;
        let meta = &self.program.meta[action];
        let seq = self.seq.fetch_add(1, Ordering::SeqCst) + 1;
        let mut vars = bind_args(action, &decl.params, args)?;
        for p in &decl.returns {
            vars.entry(p.name.clone()).or_insert_with(|| Value::zero(&p.ty));
        }
        let mut exec = MockExec {
            session: self,
            decl,
            meta,
            vars,
            seq,
            extern_done: false,
            asserts: Vec::new(),
            capture: Some(None),
        };
        exec.block(&decl.body)?;
        Ok(exec.capture.unwrap())
    }
}

/// Everything needed to (re-)solve the untrusted call of an action at a
/// given state: used by the fuzzer to search for violating outputs.
#[derive(Debug, Clone)]
pub struct SolveCtx {
    /// Scoped constraints that mention at least one unknown.
    pub constraints: Vec<Expr>,
    pub unknowns: Vec<Unknown>,
    /// Concrete values of everything else in scope at the call site.
    pub bindings: BTreeMap<String, Value>,
    /// The action's `fuzz { requires(...); }` soft hint, if any.
    pub hint: Option<Expr>,
}

enum Flow {
    Next,
    Return(Value),
    /// An `await requires` found its condition false; unwind to the atomic
    /// block, release the lock, wait, and re-run the block.
    Blocked,
}

struct MockExec<'s> {
    session: &'s MockSession,
    decl: &'s ActionDecl,
    meta: &'s ActionMeta,
    vars: BTreeMap<String, Value>,
    seq: u64,
    extern_done: bool,
    asserts: Vec<(String, bool)>,
    /// `Some` puts the interpreter in capture mode: stop at the untrusted
    /// call and record its solver context instead of solving.
    capture: Option<Option<SolveCtx>>,
}

impl<'s> MockExec<'s> {
    fn state(&self) -> &Arc<StateStore> {
        &self.session.state
    }

    fn eval(&self, e: &Expr) -> Result<Value, EngineError> {
        let env = Env::new(&self.vars, self.state());
        Ok(eval(e, &env)?)
    }

    fn unsat(&self, msg: String) -> EngineError {
        EngineError::ModelUnsat {
            action: self.decl.name.clone(),
            msg,
        }
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
            Stmt::Requires { cond, awaited, .. } => {
                let env = Env::new(&self.vars, self.state());
                let outcome = eval_bool(cond, &env);
                drop(env);
                match outcome {
                    Ok(true) => {
                        self.asserts.push((expr_source(cond), true));
                        Ok(Flow::Next)
                    }
                    Ok(false) if *awaited => Ok(Flow::Blocked),
                    Ok(false) => Err(self.unsat(format!(
                        "constraint `{}` is false",
                        expr_source(cond)
                    ))),
                    Err(e) => Err(self.unsat(format!(
                        "constraint `{}` failed to evaluate: {e}",
                        expr_source(cond)
                    ))),
                }
            }
            Stmt::Atomic { entry, body, .. } => self.atomic(&entry.map, body),
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
                // The mock IS the service: a pre-call return is just the
                // model-defined result for this input.
                let v = match value {
                    Some(e) => self.eval(e)?,
                    None => Value::Int(IntKind::Int, 0),
                };
                Ok(Flow::Return(v))
            }
            Stmt::Delete { entry, .. } => {
                let keys: Result<Vec<Value>, EngineError> =
                    entry.keys.iter().map(|k| self.eval(k)).collect();
                self.state().delete(&entry.map, &keys?)?;
                Ok(Flow::Next)
            }
        }
    }

    /// Run an atomic block under the map lock, restarting from the top when
    /// an `await requires` inside is false. The type checker guarantees no
    /// state writes precede the await, so restarting is safe.
    fn atomic(&mut self, map: &str, body: &[Stmt]) -> Result<Flow, EngineError> {
        loop {
            let ver = self.state().version(map)?;
            let st = self.state().clone();
            let flow = st.with_block_lock(map, || self.block(body))??;
            match flow {
                Flow::Blocked => {
                    self.state().wait_for_change(map, ver, AWAIT_POLL)?;
                }
                other => return Ok(other),
            }
        }
    }

    fn extern_stmt(
        &mut self,
        bind: Option<&crate::frontend::ast::ExternBind>,
        func: &str,
        args: &[Expr],
    ) -> Result<Flow, EngineError> {
        if Some(func) != self.meta.untrusted_fn.as_deref() {
            let arg_vals: Result<Vec<Value>, EngineError> =
                args.iter().map(|a| self.eval(a)).collect();
            let result = match crate::service::trusted_call(func, &arg_vals?) {
                Ok(v) => v,
                Err(TrustedError::InvalidPath(_)) => Value::Str(String::new()),
                Err(e) => return Err(EngineError::ModelError(e.to_string())),
            };
            if let Some(b) = bind {
                self.vars.insert(b.name.clone(), result);
            }
            return Ok(Flow::Next);
        }

        // The untrusted call: solve the scoped constraints for its outputs.
        self.extern_done = true;
        let mut unknowns: Vec<Unknown> = Vec::new();
        if let Some(b) = bind {
            let kind = self.bind_kind(&b.name, b.declared_ty.as_ref());
            unknowns.push(Unknown::new(&b.name, GkType::Int(kind)));
        }
        for name in &self.meta.out_arrays {
            let elem = self.out_elem(name);
            unknowns.push(Unknown::new(name, GkType::Array(elem)));
        }
        if unknowns.is_empty() {
            return Ok(Flow::Next);
        }

        let names: Vec<&str> = unknowns.iter().map(|u| u.name.as_str()).collect();
        let mut constraints: Vec<Expr> = collect_scoped_constraints(self.decl, &[])
            .into_iter()
            .filter(|c| {
                let mut hit = false;
                crate::frontend::ast::visit_idents(&c.expr, &mut |n| {
                    if names.contains(&n) {
                        hit = true;
                    }
                });
                hit
            })
            .map(|c| c.expr)
            .collect();

        let mut bindings = self.vars.clone();
        for n in &names {
            bindings.remove(*n);
        }

        if let Some(slot) = &mut self.capture {
            *slot = Some(SolveCtx {
                constraints,
                unknowns,
                bindings,
                hint: self.decl.fuzz_hint.clone(),
            });
            return Ok(Flow::Return(Value::Int(IntKind::Int, 0)));
        }
        let seed = self.session.seed ^ self.seq;

        // Prefer a successful return when the model permits one; fall back
        // to any model-permitted output otherwise.
        let mut modes: Vec<Option<Expr>> = vec![None];
        if let Some(b) = bind {
            modes.insert(0, Some(ge_zero(&b.name)));
        }
        for success in modes {
            let mut cs = constraints.clone();
            if let Some(extra) = success {
                cs.push(extra);
            }
            let req = SolveRequest {
                constraints: cs,
                unknowns: unknowns.clone(),
                bindings: bindings.clone(),
                state: self.state(),
                seed,
                mode: SolveMode::Satisfy,
                hints: None,
                max_solutions: 1,
            };
            if let SolveResult::Solutions(mut sols) = solve(&req) {
                let sol = sols.remove(0);
                for (k, v) in sol {
                    self.vars.insert(k, v);
                }
                return Ok(Flow::Next);
            }
        }
        constraints.truncate(8);
        Err(self.unsat(format!(
            "no output satisfies the scoped constraints ({})",
            constraints
                .iter()
                .map(expr_source)
                .collect::<Vec<_>>()
                .join(" AND ")
        )))
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

    fn out_elem(&self, name: &str) -> ArrElem {
        if let Some(Value::Arr(e, _)) = self.vars.get(name) {
            return *e;
        }
        self.decl
            .returns
            .iter()
            .chain(self.decl.params.iter())
            .find(|p| p.name == name)
            .and_then(|p| match &p.ty {
                GkType::Array(e) => Some(*e),
                _ => None,
            })
            .unwrap_or(ArrElem::Void)
    }
}

/// Helper constraint `name >= 0` (the success-preference soft constraint).
fn ge_zero(name: &str) -> Expr {
    Expr {
        kind: ExprKind::Binary {
            op: BinOp::Ge,
            lhs: Box::new(Expr {
                kind: ExprKind::Ident(name.to_string()),
                span: Span::default(),
                ty: Some(GkType::Int(IntKind::SsizeT)),
            }),
            rhs: Box::new(Expr {
                kind: ExprKind::IntLit(0),
                span: Span::default(),
                ty: Some(GkType::Int(IntKind::SsizeT)),
            }),
        },
        span: Span::default(),
        ty: Some(GkType::Bool),
    }
}
