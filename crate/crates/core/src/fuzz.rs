//! Targeted fuzzer: synthesizes service outputs that violate the model's
//! scoped constraints at a specific call in a scenario, then injects them
//! either behind the validator (SHIELDED) or straight into a demo target
//! (RAW).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};

use crate::constraint::solve::{
    solve_violations, Assignment, SolveMode, SolveRequest, SolveResult,
};
use crate::exec::EngineError;
use crate::frontend::typecheck::{ActionMeta, TypedModelProgram};
use crate::harness::{resolve_args, TestScript};
use crate::mock::MockSession;
use crate::service::{ExternResult, ServiceBinding, ServiceError};
use crate::state::{StateSnapshot, Value};
use crate::validator::{ValidatorSession, Verdict};

/// Synthesize up to `budget` assignments of the untrusted call's outputs
/// (return value and out-buffers) that violate `action`'s scoped
/// constraints, tailored to the given abstract state. Returns
/// [`EngineError::DomainExhausted`] when no violating output exists (the
/// constraints are tautological over the output domain), and an empty list
/// when the action never reaches its untrusted call for these arguments.
pub fn generate_malicious(
    program: &Arc<TypedModelProgram>,
    snapshot: &StateSnapshot,
    action: &str,
    args: &[Value],
    budget: usize,
    seed: u64,
    use_hints: bool,
) -> Result<Vec<Assignment>, EngineError> {
    let mock = MockSession::new(program.clone(), seed, &[])?;
    mock.state.restore(snapshot)?;
    let Some(ctx) = mock.solve_context(action, args)? else {
        return Ok(Vec::new());
    };
    let req = SolveRequest {
        constraints: ctx.constraints,
        unknowns: ctx.unknowns,
        bindings: ctx.bindings,
        state: &mock.state,
        seed,
        mode: SolveMode::Violate,
        hints: if use_hints { ctx.hint } else { None },
        max_solutions: budget.max(1),
    };
    match solve_violations(&req) {
        SolveResult::Solutions(sols) => Ok(sols),
        _ => Err(EngineError::DomainExhausted { action: action.to_string() }),
    }
}

/// Where injected values are delivered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CampaignMode {
    /// Through the validator: every injection must be flagged.
    Shielded,
    /// Straight into the demo target, validator bypassed.
    Raw,
}

/// What one injection provoked.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum InjectionOutcome {
    /// The validator reported a violation at the injected call.
    ValidatorCaught { detail: String },
    /// The unprotected target tripped a fault.
    TargetFault { signature: String },
    /// Nothing observable happened.
    Clean,
}

#[derive(Debug, Clone)]
pub struct InjectionRecord {
    /// Scenario step index the injection targeted.
    pub step: usize,
    pub action: String,
    pub injected: Assignment,
    pub outcome: InjectionOutcome,
}

#[derive(Debug, Clone)]
pub struct CampaignReport {
    pub scenario: String,
    pub mode: CampaignMode,
    pub injections: Vec<InjectionRecord>,
    /// Distinct TARGET_FAULT signatures observed (RAW mode).
    pub distinct_faults: BTreeSet<String>,
}

impl CampaignReport {
    pub fn total(&self) -> usize {
        self.injections.len()
    }

    pub fn caught(&self) -> usize {
        self.injections
            .iter()
            .filter(|r| matches!(r.outcome, InjectionOutcome::ValidatorCaught { .. }))
            .count()
    }

    pub fn faulted(&self) -> usize {
        self.injections
            .iter()
            .filter(|r| matches!(r.outcome, InjectionOutcome::TargetFault { .. }))
            .count()
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "scenario": self.scenario,
            "mode": match self.mode {
                CampaignMode::Shielded => "shielded",
                CampaignMode::Raw => "raw",
            },
            "total": self.total(),
            "caught": self.caught(),
            "faulted": self.faulted(),
            "distinct_faults": self.distinct_faults.iter().collect::<Vec<_>>(),
            "injections": self.injections.iter().map(|r| {
                serde_json::json!({
                    "step": r.step,
                    "action": r.action,
                    "injected": r.injected.iter()
                        .map(|(k, v)| (k.clone(), v.to_json()))
                        .collect::<serde_json::Map<String, serde_json::Value>>(),
                    "outcome": match &r.outcome {
                        InjectionOutcome::ValidatorCaught { detail } =>
                            serde_json::json!({"kind": "VALIDATOR_CAUGHT", "detail": detail}),
                        InjectionOutcome::TargetFault { signature } =>
                            serde_json::json!({"kind": "TARGET_FAULT", "signature": signature}),
                        InjectionOutcome::Clean => serde_json::json!({"kind": "CLEAN"}),
                    },
                })
            }).collect::<Vec<_>>(),
        })
    }
}

/// A binding that passes calls through until armed, then substitutes one
/// crafted result for the next untrusted call.
struct InjectingBinding {
    inner: Arc<dyn ServiceBinding>,
    armed: AtomicBool,
    payload: Mutex<Option<ExternResult>>,
}

impl InjectingBinding {
    fn new(inner: Arc<dyn ServiceBinding>) -> InjectingBinding {
        InjectingBinding {
            inner,
            armed: AtomicBool::new(false),
            payload: Mutex::new(None),
        }
    }

    fn arm(&self, payload: ExternResult) {
        *self.payload.lock().unwrap() = Some(payload);
        self.armed.store(true, Ordering::SeqCst);
    }
}

impl ServiceBinding for InjectingBinding {
    fn call(
        &self,
        func: &str,
        args: &[Value],
        out_arity: usize,
    ) -> Result<ExternResult, ServiceError> {
        if self.armed.swap(false, Ordering::SeqCst) {
            if let Some(p) = self.payload.lock().unwrap().take() {
                return Ok(p);
            }
        }
        self.inner.call(func, args, out_arity)
    }

    fn supports(&self, func: &str) -> bool {
        self.inner.supports(func)
    }

    fn reset(&self) {
        self.armed.store(false, Ordering::SeqCst);
        *self.payload.lock().unwrap() = None;
        self.inner.reset();
    }
}

/// Turn a violating assignment into the wire-level result the service
/// "returns": the bound variable becomes the integer return, out-arrays
/// follow in call-site order.
fn payload_from(meta: &ActionMeta, injected: &Assignment) -> ExternResult {
    let ret = meta
        .untrusted_bind
        .as_ref()
        .and_then(|n| injected.get(n))
        .and_then(|v| v.as_int())
        .unwrap_or(0);
    let outs = meta
        .out_arrays
        .iter()
        .map(|n| match injected.get(n) {
            Some(Value::Arr(_, vals)) => vals.clone(),
            _ => Vec::new(),
        })
        .collect();
    ExternResult { ret, outs }
}

struct CleanStep {
    action: String,
    args: Vec<Value>,
    snapshot: StateSnapshot,
    injectable: bool,
}

/// Run `scenario` once against the validator + `binding` to collect, per
/// step, the concrete arguments and the abstract state just before it.
fn clean_run(
    program: &Arc<TypedModelProgram>,
    binding: &Arc<dyn ServiceBinding>,
    scenario: &TestScript,
) -> Result<Vec<CleanStep>, EngineError> {
    binding.reset();
    let session = ValidatorSession::init_session(program.clone(), binding.clone(), &[])?;
    let mut bound: BTreeMap<String, Value> = BTreeMap::new();
    let mut steps = Vec::new();
    for step in &scenario.steps {
        let args = resolve_args(step, &bound)
            .map_err(|e| EngineError::ModelError(format!("scenario: {e}")))?;
        let meta = program
            .meta
            .get(&step.action)
            .ok_or_else(|| EngineError::UnknownAction(step.action.clone()))?;
        steps.push(CleanStep {
            action: step.action.clone(),
            args: args.clone(),
            snapshot: session.state.snapshot(),
            injectable: meta.untrusted_fn.is_some()
                && (meta.untrusted_bind.is_some() || !meta.out_arrays.is_empty()),
        });
        let inv = session.invoke(&step.action, &args)?;
        match &inv.verdict {
            Verdict::Ok(v) => {
                if let Some(name) = &step.bind {
                    bound.insert(name.clone(), v.clone());
                }
            }
            other => {
                return Err(EngineError::ModelError(format!(
                    "scenario step `{}` does not pass cleanly: {}",
                    step.action,
                    other.to_json()
                )))
            }
        }
    }
    Ok(steps)
}

/// Run a fuzz campaign over `scenario`: for each untrusted call, synthesize
/// violating outputs (about `budget` in total across the scenario) and
/// inject each one into a fresh run.
pub fn run_campaign(
    program: Arc<TypedModelProgram>,
    binding: Arc<dyn ServiceBinding>,
    scenario: &TestScript,
    mode: CampaignMode,
    budget: usize,
    seed: u64,
    use_hints: bool,
) -> Result<CampaignReport, EngineError> {
    let clean = clean_run(&program, &binding, scenario)?;
    let points: Vec<usize> = clean
        .iter()
        .enumerate()
        .filter(|(_, s)| s.injectable)
        .map(|(i, _)| i)
        .collect();
    let mut report = CampaignReport {
        scenario: scenario.name.clone(),
        mode,
        injections: Vec::new(),
        distinct_faults: BTreeSet::new(),
    };
    if points.is_empty() {
        return Ok(report);
    }
    let per_point = budget.div_ceil(points.len()).max(1);

    for &i in &points {
        let step = &clean[i];
        let values = match generate_malicious(
            &program,
            &step.snapshot,
            &step.action,
            &step.args,
            per_point,
            seed ^ (i as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15),
            use_hints,
        ) {
            Ok(v) => v,
            // A tautological call site simply yields no injections here.
            Err(EngineError::DomainExhausted { .. }) => continue,
            Err(e) => return Err(e),
        };
        for injected in values {
            if report.injections.len() >= budget {
                return Ok(report);
            }
            let meta = &program.meta[&step.action];
            let payload = payload_from(meta, &injected);
            let outcome = match mode {
                CampaignMode::Shielded => {
                    run_shielded(&program, &binding, scenario, i, payload)?
                }
                CampaignMode::Raw => run_raw(&program, &binding, scenario, i, payload)?,
            };
            if let InjectionOutcome::TargetFault { signature } = &outcome {
                report.distinct_faults.insert(signature.clone());
            }
            report.injections.push(InjectionRecord {
                step: i,
                action: step.action.clone(),
                injected,
                outcome,
            });
        }
    }
    Ok(report)
}

fn run_shielded(
    program: &Arc<TypedModelProgram>,
    binding: &Arc<dyn ServiceBinding>,
    scenario: &TestScript,
    inject_at: usize,
    payload: ExternResult,
) -> Result<InjectionOutcome, EngineError> {
    binding.reset();
    let wrapper = Arc::new(InjectingBinding::new(binding.clone()));
    let session = ValidatorSession::init_session(program.clone(), wrapper.clone(), &[])?;
    let mut bound: BTreeMap<String, Value> = BTreeMap::new();
    for (j, step) in scenario.steps.iter().enumerate() {
        let args = resolve_args(step, &bound)
            .map_err(|e| EngineError::ModelError(format!("scenario: {e}")))?;
        if j == inject_at {
            wrapper.arm(payload);
            let inv = session.invoke(&step.action, &args)?;
            return Ok(match inv.verdict {
                Verdict::Ok(_) => InjectionOutcome::Clean,
                other => InjectionOutcome::ValidatorCaught {
                    detail: other.to_json().to_string(),
                },
            });
        }
        let inv = session.invoke(&step.action, &args)?;
        if let (Verdict::Ok(v), Some(name)) = (&inv.verdict, &step.bind) {
            bound.insert(name.clone(), v.clone());
        }
    }
    Ok(InjectionOutcome::Clean)
}

fn run_raw(
    program: &Arc<TypedModelProgram>,
    binding: &Arc<dyn ServiceBinding>,
    scenario: &TestScript,
    inject_at: usize,
    payload: ExternResult,
) -> Result<InjectionOutcome, EngineError> {
    binding.reset();
    let mut target = DemoTarget::new();
    let mut bound: BTreeMap<String, Value> = BTreeMap::new();
    for (j, step) in scenario.steps.iter().enumerate() {
        let args = resolve_args(step, &bound)
            .map_err(|e| EngineError::ModelError(format!("scenario: {e}")))?;
        let meta = &program.meta[&step.action];
        let Some(func) = &meta.untrusted_fn else {
            continue;
        };
        let result = if j == inject_at {
            payload.clone()
        } else {
            binding.call(func, &args, meta.out_arrays.len())?
        };
        if let Some(name) = &step.bind {
            bound.insert(
                name.clone(),
                Value::Int(crate::frontend::ast::IntKind::OffT, result.ret),
            );
        }
        if let Some(signature) = target.observe(&step.action, &args, &result) {
            return Ok(InjectionOutcome::TargetFault { signature });
        }
    }
    Ok(InjectionOutcome::Clean)
}

const SHADOW_SLOTS: usize = 16;

/// A deliberately buggy client in the style of a real TEE runtime bug: it
/// indexes a fixed shadow table directly with the descriptor the service
/// returned, trusting it blindly. Out-of-range and confused descriptors are
/// surfaced as guard-checked faults instead of memory corruption.
pub struct DemoTarget {
    slots: [Option<ShadowFile>; SHADOW_SLOTS],
}

#[derive(Debug, Default, Clone)]
struct ShadowFile {
    expected: Vec<u8>,
    cursor: usize,
}

impl Default for DemoTarget {
    fn default() -> DemoTarget {
        DemoTarget::new()
    }
}

impl DemoTarget {
    pub fn new() -> DemoTarget {
        DemoTarget { slots: std::array::from_fn(|_| None) }
    }

    /// Feed one completed call. Returns a fault signature if the target's
    /// internal guards trip.
    pub fn observe(&mut self, action: &str, args: &[Value], result: &ExternResult) -> Option<String> {
        let int_arg = |i: usize| args.get(i).and_then(|v| v.as_int()).unwrap_or(0);
        match action {
            "open" => {
                if result.ret < 0 {
                    return None;
                }
                let fd = result.ret;
                if fd as usize >= SHADOW_SLOTS {
                    return Some("fd outside shadow table".to_string());
                }
                // Bug replica: the slot is overwritten without checking
                // whether it is already tracking a live descriptor.
                self.slots[fd as usize] = Some(ShadowFile::default());
                None
            }
            "close" => {
                let fd = int_arg(0);
                if result.ret == 0 && (0..SHADOW_SLOTS as i64).contains(&fd) {
                    self.slots[fd as usize] = None;
                }
                None
            }
            "write" => {
                if result.ret < 0 {
                    return None;
                }
                let fd = int_arg(0);
                let slot = match self.slot_mut(fd) {
                    Ok(s) => s,
                    Err(sig) => return Some(sig),
                };
                let buf: Vec<u8> = match args.get(2) {
                    Some(Value::Arr(_, vals)) => vals.iter().map(|v| *v as u8).collect(),
                    Some(Value::Str(s)) => s.as_bytes().to_vec(),
                    _ => Vec::new(),
                };
                if result.ret > 1 << 20 {
                    return Some("write count overflows shadow buffer".to_string());
                }
                let n = result.ret as usize;
                let at = slot.cursor;
                if slot.expected.len() < at + n {
                    slot.expected.resize(at + n, 0);
                }
                for k in 0..n {
                    slot.expected[at + k] = buf.get(k).copied().unwrap_or(0);
                }
                slot.cursor = at + n;
                None
            }
            "lseek" => {
                if result.ret < 0 {
                    return None;
                }
                let fd = int_arg(0);
                let slot = match self.slot_mut(fd) {
                    Ok(s) => s,
                    Err(sig) => return Some(sig),
                };
                if result.ret > 1 << 20 {
                    return Some("seek position overflows shadow buffer".to_string());
                }
                slot.cursor = result.ret as usize;
                None
            }
            "read" => {
                if result.ret < 0 {
                    return None;
                }
                let fd = int_arg(0);
                let slot = match self.slot_mut(fd) {
                    Ok(s) => s,
                    Err(sig) => return Some(sig),
                };
                let n = result.ret as usize;
                if slot.cursor + n > slot.expected.len() {
                    return Some("read past recorded size".to_string());
                }
                let got = result.outs.first();
                for k in 0..n {
                    let g = got.and_then(|b| b.get(k)).copied().unwrap_or(0) as u8;
                    if g != slot.expected[slot.cursor + k] {
                        return Some("read data mismatch".to_string());
                    }
                }
                slot.cursor += n;
                None
            }
            _ => None,
        }
    }

    fn slot_mut(&mut self, fd: i64) -> Result<&mut ShadowFile, String> {
        if !(0..SHADOW_SLOTS as i64).contains(&fd) {
            return Err("fd outside shadow table".to_string());
        }
        match self.slots[fd as usize].as_mut() {
            Some(s) => Ok(s),
            None => Err("operation on untracked fd".to_string()),
        }
    }
}
