//! Conformance harness: JSON test scripts that drive any backend (validator
//! over the correct service, or the constraint-solving mock) through a call
//! sequence and check the results.
//!
//! Script format (one JSON object per file):
//!
//! ```json
//! {
//!   "name": "write_then_read",
//!   "seeds": 5,
//!   "steps": [
//!     {"action": "open", "args": ["/foo", 66, 420], "expect": ">= 0", "bind": "fd"},
//!     {"action": "write", "args": ["$fd", 5, {"bytes": "hello"}], "expect": "== 5"},
//!     {"action": "lseek", "args": ["$fd", 0, 0], "expect": "== 0"},
//!     {"action": "read", "args": ["$fd", 5], "expect": ">= 0", "expect_buf": "hello"}
//!   ]
//! }
//! ```
//!
//! Argument forms: integers; strings (leading `$` references a bound
//! result); `{"bytes": PATTERN}` for buffers. Byte patterns are either a
//! literal string, `repeat(0xff,100)`, or `hex:68656c6c6f`. `expect` is a
//! comparison against the integer result (`>= 0`, `== -ENOENT`, ...) or
//! `"any"`. `expect_buf` checks the first returned buffer: the first
//! `result` bytes must match the pattern prefix.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use crate::exec::EngineError;
use crate::frontend::consts::builtin_const;
use crate::frontend::TypedModelProgram;
use crate::mock::MockSession;
use crate::service::ServiceBinding;
use crate::state::Value;
use crate::validator::{Invocation, ValidatorSession, Verdict};

/// One byte-buffer pattern.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BytePattern(pub Vec<u8>);

impl BytePattern {
    /// Parse `repeat(0xff,100)`, `hex:...`, or a literal string.
    pub fn parse(s: &str) -> Result<BytePattern, String> {
        if let Some(body) = s.strip_prefix("repeat(").and_then(|b| b.strip_suffix(')')) {
            let (byte, count) = body
                .split_once(',')
                .ok_or_else(|| format!("bad repeat pattern `{s}`"))?;
            let byte = parse_int(byte.trim()).ok_or_else(|| format!("bad byte in `{s}`"))?;
            let count = parse_int(count.trim()).ok_or_else(|| format!("bad count in `{s}`"))?;
            if !(0..=255).contains(&byte) || !(0..=1_048_576).contains(&count) {
                return Err(format!("repeat pattern out of range: `{s}`"));
            }
            return Ok(BytePattern(vec![byte as u8; count as usize]));
        }
        if let Some(hex) = s.strip_prefix("hex:") {
            if hex.len() % 2 != 0 {
                return Err(format!("odd-length hex pattern `{s}`"));
            }
            let mut out = Vec::with_capacity(hex.len() / 2);
            for i in (0..hex.len()).step_by(2) {
                let b = u8::from_str_radix(&hex[i..i + 2], 16)
                    .map_err(|_| format!("bad hex pattern `{s}`"))?;
                out.push(b);
            }
            return Ok(BytePattern(out));
        }
        Ok(BytePattern(s.as_bytes().to_vec()))
    }
}

fn parse_int(s: &str) -> Option<i64> {
    if let Some(hex) = s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        i64::from_str_radix(hex, 16).ok()
    } else {
        s.parse().ok()
    }
}

/// One script step argument.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ArgSpec {
    Int(i64),
    Str(String),
    /// `$name`: the integer result bound by an earlier step.
    Ref(String),
    Bytes(Vec<u8>),
}

/// Comparison operators usable in `expect`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmpOp {
    Eq,
    Ne,
    Ge,
    Le,
    Gt,
    Lt,
}

impl CmpOp {
    fn apply(self, lhs: i64, rhs: i64) -> bool {
        match self {
            CmpOp::Eq => lhs == rhs,
            CmpOp::Ne => lhs != rhs,
            CmpOp::Ge => lhs >= rhs,
            CmpOp::Le => lhs <= rhs,
            CmpOp::Gt => lhs > rhs,
            CmpOp::Lt => lhs < rhs,
        }
    }

    fn symbol(self) -> &'static str {
        match self {
            CmpOp::Eq => "==",
            CmpOp::Ne => "!=",
            CmpOp::Ge => ">=",
            CmpOp::Le => "<=",
            CmpOp::Gt => ">",
            CmpOp::Lt => "<",
        }
    }
}

/// Expected integer result of a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expectation {
    Any,
    Cmp(CmpOp, i64),
}

impl Expectation {
    /// Parse `"any"` or `OP OPERAND` where the operand is an integer or an
    /// optionally negated builtin constant (`== -ENOENT`).
    pub fn parse(s: &str) -> Result<Expectation, String> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("any") {
            return Ok(Expectation::Any);
        }
        let (op, rest) = [
            (">=", CmpOp::Ge),
            ("<=", CmpOp::Le),
            ("==", CmpOp::Eq),
            ("!=", CmpOp::Ne),
            (">", CmpOp::Gt),
            ("<", CmpOp::Lt),
        ]
        .iter()
        .find_map(|(sym, op)| s.strip_prefix(sym).map(|rest| (*op, rest)))
        .ok_or_else(|| format!("bad expectation `{s}`"))?;
        let rest = rest.trim();
        let (neg, name) = match rest.strip_prefix('-') {
            Some(r) => (true, r.trim()),
            None => (false, rest),
        };
        let val = parse_int(name)
            .or_else(|| builtin_const(name))
            .ok_or_else(|| format!("bad expectation operand `{rest}`"))?;
        Ok(Expectation::Cmp(op, if neg { -val } else { val }))
    }

    pub fn check(&self, ret: i64) -> bool {
        match self {
            Expectation::Any => true,
            Expectation::Cmp(op, rhs) => op.apply(ret, *rhs),
        }
    }
}

impl std::fmt::Display for Expectation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Expectation::Any => write!(f, "any"),
            Expectation::Cmp(op, rhs) => write!(f, "{} {}", op.symbol(), rhs),
        }
    }
}

/// One step of a script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptStep {
    pub action: String,
    pub args: Vec<ArgSpec>,
    pub expect: Expectation,
    pub expect_buf: Option<BytePattern>,
    pub bind: Option<String>,
}

/// A whole conformance script.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TestScript {
    pub name: String,
    pub steps: Vec<ScriptStep>,
    /// Number of mock seeds to run (backends with one possible output run
    /// the script once).
    pub seeds: u64,
}

impl TestScript {
    pub fn parse(src: &str) -> Result<TestScript, String> {
        let v: serde_json::Value =
            serde_json::from_str(src).map_err(|e| format!("bad script JSON: {e}"))?;
        let obj = v.as_object().ok_or("script must be a JSON object")?;
        let name = obj
            .get("name")
            .and_then(|n| n.as_str())
            .ok_or("script needs a string `name`")?
            .to_string();
        let seeds = obj.get("seeds").and_then(|s| s.as_u64()).unwrap_or(1).max(1);
        let steps_json = obj
            .get("steps")
            .and_then(|s| s.as_array())
            .ok_or("script needs a `steps` array")?;
        let mut steps = Vec::new();
        for (i, sj) in steps_json.iter().enumerate() {
            steps.push(parse_step(sj).map_err(|e| format!("step {i}: {e}"))?);
        }
        Ok(TestScript { name, steps, seeds })
    }
}

fn parse_step(v: &serde_json::Value) -> Result<ScriptStep, String> {
    let obj = v.as_object().ok_or("step must be an object")?;
    let action = obj
        .get("action")
        .and_then(|a| a.as_str())
        .ok_or("step needs a string `action`")?
        .to_string();
    let mut args = Vec::new();
    if let Some(arr) = obj.get("args") {
        let arr = arr.as_array().ok_or("`args` must be an array")?;
        for a in arr {
            args.push(parse_arg(a)?);
        }
    }
    let expect = match obj.get("expect") {
        Some(e) => Expectation::parse(e.as_str().ok_or("`expect` must be a string")?)?,
        None => Expectation::Any,
    };
    let expect_buf = match obj.get("expect_buf") {
        Some(e) => Some(BytePattern::parse(
            e.as_str().ok_or("`expect_buf` must be a string")?,
        )?),
        None => None,
    };
    let bind = obj
        .get("bind")
        .map(|b| {
            b.as_str()
                .map(str::to_string)
                .ok_or_else(|| "`bind` must be a string".to_string())
        })
        .transpose()?;
    Ok(ScriptStep { action, args, expect, expect_buf, bind })
}

fn parse_arg(v: &serde_json::Value) -> Result<ArgSpec, String> {
    match v {
        serde_json::Value::Number(n) => n
            .as_i64()
            .map(ArgSpec::Int)
            .ok_or_else(|| format!("non-integer numeric argument {n}")),
        serde_json::Value::String(s) => match s.strip_prefix('$') {
            Some(name) => Ok(ArgSpec::Ref(name.to_string())),
            None => Ok(ArgSpec::Str(s.clone())),
        },
        serde_json::Value::Object(o) => {
            if let Some(b) = o.get("bytes") {
                let pat = b.as_str().ok_or("`bytes` must be a string pattern")?;
                Ok(ArgSpec::Bytes(BytePattern::parse(pat)?.0))
            } else {
                Err("object arguments must be {\"bytes\": PATTERN}".to_string())
            }
        }
        other => Err(format!("unsupported argument {other}")),
    }
}

/// Resolve a step's arguments against the results bound so far.
pub fn resolve_args(
    step: &ScriptStep,
    bound: &BTreeMap<String, Value>,
) -> Result<Vec<Value>, String> {
    use crate::frontend::ast::{ArrElem, IntKind};
    step.args
        .iter()
        .map(|a| match a {
            ArgSpec::Int(v) => Ok(Value::Int(IntKind::OffT, *v)),
            ArgSpec::Str(s) => Ok(Value::Str(s.clone())),
            ArgSpec::Bytes(b) => Ok(Value::Arr(
                ArrElem::Int(IntKind::Char),
                b.iter().map(|x| *x as i64).collect(),
            )),
            ArgSpec::Ref(name) => bound
                .get(name)
                .cloned()
                .ok_or_else(|| format!("unbound reference `${name}`")),
        })
        .collect()
}

/// Which kind of backend a suite run drives; determines how a failure is
/// classified.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BackendKind {
    /// Validator guarding the correct service: a failure means the model
    /// rejects legal behaviour.
    ValidatorCorrect,
    /// Constraint-solving mock: a failure means the model admits behaviour
    /// the scripts consider illegal.
    Mock,
}

impl BackendKind {
    pub fn classification(self) -> &'static str {
        match self {
            BackendKind::ValidatorCorrect => "OVER_RESTRICTIVE",
            BackendKind::Mock => "OVER_PERMISSIVE",
        }
    }
}

/// Anything that can execute script steps.
pub trait Backend {
    fn kind(&self) -> BackendKind;
    /// Restart from the initial state. `seed` matters only to backends with
    /// solver-driven choice.
    fn reset(&mut self, seed: u64) -> Result<(), EngineError>;
    fn invoke(&mut self, action: &str, args: &[Value]) -> Result<Invocation, EngineError>;
}

/// Validator session over a (presumed correct) service binding.
pub struct ValidatorBackend {
    program: Arc<TypedModelProgram>,
    binding: Arc<dyn ServiceBinding>,
    session: ValidatorSession,
}

impl ValidatorBackend {
    pub fn new(
        program: Arc<TypedModelProgram>,
        binding: Arc<dyn ServiceBinding>,
    ) -> Result<ValidatorBackend, EngineError> {
        let session = ValidatorSession::init_session(program.clone(), binding.clone(), &[])?;
        Ok(ValidatorBackend { program, binding, session })
    }
}

impl Backend for ValidatorBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::ValidatorCorrect
    }

    fn reset(&mut self, _seed: u64) -> Result<(), EngineError> {
        self.binding.reset();
        self.session =
            ValidatorSession::init_session(self.program.clone(), self.binding.clone(), &[])?;
        Ok(())
    }

    fn invoke(&mut self, action: &str, args: &[Value]) -> Result<Invocation, EngineError> {
        self.session.invoke(action, args)
    }
}

/// Mock session backend.
pub struct MockBackend {
    program: Arc<TypedModelProgram>,
    session: MockSession,
}

impl MockBackend {
    pub fn new(program: Arc<TypedModelProgram>, seed: u64) -> Result<MockBackend, EngineError> {
        let session = MockSession::new(program.clone(), seed, &[])?;
        Ok(MockBackend { program, session })
    }
}

impl Backend for MockBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::Mock
    }

    fn reset(&mut self, seed: u64) -> Result<(), EngineError> {
        self.session = MockSession::new(self.program.clone(), seed, &[])?;
        Ok(())
    }

    fn invoke(&mut self, action: &str, args: &[Value]) -> Result<Invocation, EngineError> {
        self.session.mock_invoke(action, args)
    }
}

/// A backend over an externally configured validator session (e.g. one with
/// a trace sink attached). It cannot be reset; use it with [`run_script`].
pub struct SessionBackend {
    pub session: ValidatorSession,
}

impl Backend for SessionBackend {
    fn kind(&self) -> BackendKind {
        BackendKind::ValidatorCorrect
    }

    fn reset(&mut self, _seed: u64) -> Result<(), EngineError> {
        Err(EngineError::ModelError(
            "a session-bound backend cannot be reset".to_string(),
        ))
    }

    fn invoke(&mut self, action: &str, args: &[Value]) -> Result<Invocation, EngineError> {
        self.session.invoke(action, args)
    }
}

/// Why a script run failed.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FailReason {
    Expectation { step: usize, detail: String },
    Violation { step: usize, detail: String },
    EngineFailure { step: usize, detail: String },
}

impl std::fmt::Display for FailReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            FailReason::Expectation { step, detail } => {
                write!(f, "step {step}: expectation failed: {detail}")
            }
            FailReason::Violation { step, detail } => {
                write!(f, "step {step}: model violation: {detail}")
            }
            FailReason::EngineFailure { step, detail } => {
                write!(f, "step {step}: engine failure: {detail}")
            }
        }
    }
}

/// Result of one (script, seed) run.
#[derive(Debug, Clone)]
pub struct ScriptOutcome {
    pub script: String,
    pub seed: u64,
    pub failure: Option<FailReason>,
    /// `OVER_RESTRICTIVE` / `OVER_PERMISSIVE` when failed.
    pub classification: Option<&'static str>,
}

/// Aggregate result of a suite run.
#[derive(Debug, Clone, Default)]
pub struct SuiteReport {
    pub outcomes: Vec<ScriptOutcome>,
}

impl SuiteReport {
    pub fn passed(&self) -> usize {
        self.outcomes.iter().filter(|o| o.failure.is_none()).count()
    }

    pub fn failed(&self) -> usize {
        self.outcomes.len() - self.passed()
    }

    pub fn all_passed(&self) -> bool {
        self.failed() == 0
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "total": self.outcomes.len(),
            "passed": self.passed(),
            "failed": self.failed(),
            "failures": self
                .outcomes
                .iter()
                .filter(|o| o.failure.is_some())
                .map(|o| {
                    serde_json::json!({
                        "script": o.script,
                        "seed": o.seed,
                        "reason": o.failure.as_ref().unwrap().to_string(),
                        "classification": o.classification,
                    })
                })
                .collect::<Vec<_>>(),
        })
    }
}

/// Run one script once on an already-reset backend.
pub fn run_script(backend: &mut dyn Backend, script: &TestScript) -> Option<FailReason> {
    let mut bound: BTreeMap<String, Value> = BTreeMap::new();
    for (i, step) in script.steps.iter().enumerate() {
        let args = match resolve_args(step, &bound) {
            Ok(a) => a,
            Err(e) => return Some(FailReason::EngineFailure { step: i, detail: e }),
        };
        let inv = match backend.invoke(&step.action, &args) {
            Ok(inv) => inv,
            Err(e) => {
                return Some(FailReason::EngineFailure { step: i, detail: e.to_string() })
            }
        };
        let ret = match &inv.verdict {
            Verdict::Ok(v) => match v.as_int() {
                Some(r) => r,
                None => 0,
            },
            other => {
                let detail = serde_json::to_string(&other.to_json()).unwrap_or_default();
                return Some(FailReason::Violation { step: i, detail });
            }
        };
        if !step.expect.check(ret) {
            return Some(FailReason::Expectation {
                step: i,
                detail: format!("`{}` returned {ret}, wanted {}", step.action, step.expect),
            });
        }
        if let Some(pat) = &step.expect_buf {
            if let Some(reason) = check_buf(i, step, &inv, ret, &pat.0) {
                return Some(reason);
            }
        }
        if let Some(name) = &step.bind {
            if let Verdict::Ok(v) = &inv.verdict {
                bound.insert(name.clone(), v.clone());
            }
        }
    }
    None
}

fn check_buf(
    step_idx: usize,
    step: &ScriptStep,
    inv: &Invocation,
    ret: i64,
    pattern: &[u8],
) -> Option<FailReason> {
    let buf = inv.outputs.values().find_map(|v| match v {
        Value::Arr(_, vals) => Some(vals),
        _ => None,
    });
    let Some(buf) = buf else {
        return Some(FailReason::Expectation {
            step: step_idx,
            detail: format!("`{}` returned no buffer to check", step.action),
        });
    };
    let n = ret.max(0) as usize;
    if n > pattern.len() {
        return Some(FailReason::Expectation {
            step: step_idx,
            detail: format!(
                "`{}` returned {n} bytes but only {} are expected",
                step.action,
                pattern.len()
            ),
        });
    }
    for i in 0..n {
        let got = buf.get(i).copied().unwrap_or(0) as u8 as i64;
        if got != pattern[i] as i64 {
            return Some(FailReason::Expectation {
                step: step_idx,
                detail: format!(
                    "`{}` buffer byte {i} is {got}, wanted {}",
                    step.action, pattern[i]
                ),
            });
        }
    }
    None
}

/// Run a whole suite. Mock backends run each script once per seed
/// (`base_seed..base_seed + seeds`); single-outcome backends run each
/// script once.
pub fn run_suite(
    backend: &mut dyn Backend,
    scripts: &[TestScript],
    base_seed: u64,
) -> Result<SuiteReport, EngineError> {
    let mut report = SuiteReport::default();
    for script in scripts {
        let seeds: Vec<u64> = match backend.kind() {
            BackendKind::ValidatorCorrect => vec![base_seed],
            BackendKind::Mock => (0..script.seeds).map(|i| base_seed.wrapping_add(i)).collect(),
        };
        for seed in seeds {
            backend.reset(seed)?;
            let failure = run_script(backend, script);
            let classification = failure.as_ref().map(|_| backend.kind().classification());
            report.outcomes.push(ScriptOutcome {
                script: script.name.clone(),
                seed,
                failure,
                classification,
            });
        }
    }
    Ok(report)
}

/// Load every `*.json` script in a directory, sorted by file name.
pub fn load_dir(dir: &Path) -> Result<Vec<TestScript>, String> {
    let mut entries: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| format!("cannot read {}: {e}", dir.display()))?
        .filter_map(|e| e.ok())
        .map(|e| e.path())
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    entries.sort();
    let mut scripts = Vec::new();
    for path in entries {
        let src = std::fs::read_to_string(&path)
            .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
        let script = TestScript::parse(&src)
            .map_err(|e| format!("{}: {e}", path.display()))?;
        scripts.push(script);
    }
    Ok(scripts)
}
