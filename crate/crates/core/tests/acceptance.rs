//! Acceptance suite: every release gate in one place. Each criterion prints
//! a single PASS/FAIL line (run with `--nocapture` to see them as they
//! complete); the test fails if any criterion fails.

mod common;

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use gk_core::constraint::{
    eval_conjunction, solve, solve_violations, Env, SolveMode, SolveRequest, SolveResult,
};
use gk_core::exec::EngineError;
use gk_core::frontend::{compile, IntKind, TypedModelProgram};
use gk_core::fuzz::{generate_malicious, run_campaign, CampaignMode, InjectionOutcome};
use gk_core::harness::{
    load_dir, resolve_args, run_script, run_suite, FailReason, MockBackend, SessionBackend,
    TestScript, ValidatorBackend,
};
use gk_core::mock::MockSession;
use gk_core::models::{load_bundled, FS_MODEL_SRC};
use gk_core::service::{
    adversary, correct_fs, correct_sync, AdversaryVariant, ServiceBinding,
};
use gk_core::state::{StateStore, Value};
use gk_core::validator::{replay, ValidatorSession, Verdict};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use common::{bool_expr, brute_force, int_unknown, truth_of};

fn fs_program() -> Arc<TypedModelProgram> {
    Arc::new(load_bundled("fs").expect("fs model compiles"))
}

fn sync_program() -> Arc<TypedModelProgram> {
    Arc::new(load_bundled("sync").expect("sync model compiles"))
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn iv(v: i64) -> Value {
    Value::Int(IntKind::Int, v)
}

fn fs_suite() -> Vec<TestScript> {
    load_dir(&repo_path("suites/fs")).expect("fs suite loads")
}

fn sync_suite() -> Vec<TestScript> {
    load_dir(&repo_path("suites/sync")).expect("sync suite loads")
}

fn demo_scenario() -> TestScript {
    let src = std::fs::read_to_string(repo_path("scenarios/fs_demo.json"))
        .expect("bundled scenario readable");
    TestScript::parse(&src).expect("bundled scenario parses")
}

// ------------------------------------------------------------------------
// criterion 1: conformance soundness
// ------------------------------------------------------------------------

fn criterion_conformance() -> Result<String, String> {
    let start = Instant::now();
    let fs = fs_suite();
    let sync = sync_suite();
    if fs.len() < 50 {
        return Err(format!("fs suite has only {} scripts", fs.len()));
    }
    if !fs.iter().any(|s| s.name.contains("conformance")) {
        return Err("fs suite is missing the conformance scenario".to_string());
    }

    let mut vfs = ValidatorBackend::new(fs_program(), correct_fs())
        .map_err(|e| e.to_string())?;
    let fs_report = run_suite(&mut vfs, &fs, 0).map_err(|e| e.to_string())?;
    let mut vsync = ValidatorBackend::new(sync_program(), correct_sync())
        .map_err(|e| e.to_string())?;
    let sync_report = run_suite(&mut vsync, &sync, 0).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();

    for o in fs_report.outcomes.iter().chain(&sync_report.outcomes) {
        if let Some(f) = &o.failure {
            return Err(format!("{}: {f}", o.script));
        }
    }
    if elapsed >= Duration::from_secs(10) {
        return Err(format!("took {elapsed:.2?}, budget is 10s"));
    }
    Ok(format!(
        "{} fs + {} sync scripts, 0 violations, {elapsed:.2?}",
        fs.len(),
        sync.len()
    ))
}

// ------------------------------------------------------------------------
// criterion 2: mock fidelity
// ------------------------------------------------------------------------

fn criterion_mock_fidelity() -> Result<String, String> {
    let mut total = 0usize;
    for (prog, mut scripts) in [(fs_program(), fs_suite()), (sync_program(), sync_suite())] {
        for s in &mut scripts {
            s.seeds = 10;
        }
        let mut mock = MockBackend::new(prog, 0).map_err(|e| e.to_string())?;
        let report = run_suite(&mut mock, &scripts, 0).map_err(|e| e.to_string())?;
        for o in &report.outcomes {
            if let Some(f) = &o.failure {
                return Err(format!("{} (seed {}): {f}", o.script, o.seed));
            }
        }
        total += report.outcomes.len();
    }
    Ok(format!("{total} script runs (10 seeds each), 0 failures"))
}

// ------------------------------------------------------------------------
// criterion 3: attack detection
// ------------------------------------------------------------------------

struct Attack {
    variant: AdversaryVariant,
    program: Arc<TypedModelProgram>,
    base: fn() -> Arc<dyn ServiceBinding>,
    script: &'static str,
    step: usize,
}

fn attacks() -> Vec<Attack> {
    let fs = fs_program();
    let sy = sync_program();
    let rw = r#"{"name": "atk", "steps": [
        {"action": "open", "args": ["/f", 66, 420], "expect": ">= 0", "bind": "fd"},
        {"action": "write", "args": ["$fd", 4, {"bytes": "abcd"}], "expect": "== 4"},
        {"action": "lseek", "args": ["$fd", 0, 0], "expect": "== 0"},
        {"action": "read", "args": ["$fd", 4], "expect": ">= 0"}
    ]}"#;
    vec![
        Attack {
            variant: AdversaryVariant::FdConfusion,
            program: fs.clone(),
            base: correct_fs,
            script: r#"{"name": "atk", "steps": [
                {"action": "open", "args": ["/a", 66, 420], "expect": ">= 0"},
                {"action": "open", "args": ["/b", 66, 420], "expect": ">= 0"}
            ]}"#,
            step: 1,
        },
        Attack {
            variant: AdversaryVariant::ShortReadLie,
            program: fs.clone(),
            base: correct_fs,
            script: rw,
            step: 3,
        },
        Attack {
            variant: AdversaryVariant::WrongData,
            program: fs.clone(),
            base: correct_fs,
            script: rw,
            step: 3,
        },
        Attack {
            variant: AdversaryVariant::PhantomSuccess,
            program: fs.clone(),
            base: correct_fs,
            script: r#"{"name": "atk", "steps": [
                {"action": "open", "args": ["/f", 66, 420], "expect": ">= 0", "bind": "fd"},
                {"action": "write", "args": ["$fd", 4, {"bytes": "abcd"}], "expect": "== 4"}
            ]}"#,
            step: 1,
        },
        Attack {
            variant: AdversaryVariant::RenameAlias,
            program: fs,
            base: correct_fs,
            script: r#"{"name": "atk", "steps": [
                {"action": "open", "args": ["/old", 66, 420], "expect": ">= 0", "bind": "fd"},
                {"action": "close", "args": ["$fd"], "expect": "== 0"},
                {"action": "rename", "args": ["/old", "/new"], "expect": "== 0"},
                {"action": "lstat", "args": ["/old"], "expect": "== -ENOENT"}
            ]}"#,
            step: 3,
        },
        Attack {
            variant: AdversaryVariant::DoubleLockGrant,
            program: sy.clone(),
            base: correct_sync,
            script: r#"{"name": "atk", "steps": [
                {"action": "mutex_init", "args": [1, 0], "expect": "== 0"},
                {"action": "mutex_lock", "args": [1, 1], "expect": "== 0"},
                {"action": "mutex_lock", "args": [1, 2], "expect": "any"}
            ]}"#,
            step: 2,
        },
        Attack {
            variant: AdversaryVariant::OverWake,
            program: sy,
            base: correct_sync,
            script: r#"{"name": "atk", "steps": [
                {"action": "futex_init", "args": [7, 0], "expect": "== 0"},
                {"action": "futex_wake", "args": [7, 1], "expect": "== 0"}
            ]}"#,
            step: 1,
        },
    ]
}

fn run_attack(atk: &Attack) -> Result<(), String> {
    let script = TestScript::parse(atk.script).map_err(|e| e.to_string())?;
    // In a contended state the correct service genuinely blocks the second
    // lock, so the clean-pass precondition is checked for every variant
    // except DoubleLockGrant.
    if atk.variant != AdversaryVariant::DoubleLockGrant {
        let mut clean = ValidatorBackend::new(atk.program.clone(), (atk.base)())
            .map_err(|e| e.to_string())?;
        if let Some(f) = run_script(&mut clean, &script) {
            return Err(format!(
                "{}: attack script fails on the correct service: {f}",
                atk.variant.id()
            ));
        }
    }
    let mut attacked =
        ValidatorBackend::new(atk.program.clone(), adversary((atk.base)(), atk.variant))
            .map_err(|e| e.to_string())?;
    match run_script(&mut attacked, &script) {
        Some(FailReason::Violation { step, .. }) if step == atk.step => Ok(()),
        other => Err(format!(
            "{}: expected a violation at step {}, got {other:?}",
            atk.variant.id(),
            atk.step
        )),
    }
}

fn criterion_attack_detection() -> Result<String, String> {
    let list = attacks();
    for atk in &list {
        run_attack(atk)?;
    }
    Ok(format!("{}/{} variants caught at the attacked step", list.len(), list.len()))
}

// ------------------------------------------------------------------------
// criterion 4: fuzz/validator duality (shielded campaign)
// ------------------------------------------------------------------------

fn criterion_shielded_campaign() -> Result<String, String> {
    let program = fs_program();
    let scenario = demo_scenario();
    let budget = 20 * scenario.steps.len();
    let report = run_campaign(
        program.clone(),
        correct_fs(),
        &scenario,
        CampaignMode::Shielded,
        budget,
        11,
        true,
    )
    .map_err(|e| e.to_string())?;
    if report.total() == 0 {
        return Err("campaign produced no injections".to_string());
    }
    if report.caught() != report.total() {
        return Err(format!(
            "{} of {} injections were not caught",
            report.total() - report.caught(),
            report.total()
        ));
    }

    // Independent oracle: re-derive up to 20 malicious outputs per call
    // site along the clean run and confirm each one falsifies the scoped
    // constraints of its call.
    let session = ValidatorSession::init_session(program.clone(), correct_fs(), &[])
        .map_err(|e| e.to_string())?;
    let mut bound: BTreeMap<String, Value> = BTreeMap::new();
    let mut checked = 0usize;
    for step in &scenario.steps {
        let args = resolve_args(step, &bound).map_err(|e| e.to_string())?;
        let snap = session.state.snapshot();
        match generate_malicious(&program, &snap, &step.action, &args, 20, 11, true) {
            Ok(sols) => {
                let probe = MockSession::new(program.clone(), 0, &[])
                    .map_err(|e| e.to_string())?;
                probe.state.restore(&snap).map_err(|e| e.to_string())?;
                let Some(ctx) = probe
                    .solve_context(&step.action, &args)
                    .map_err(|e| e.to_string())?
                else {
                    continue;
                };
                for sol in &sols {
                    let mut vars = ctx.bindings.clone();
                    for (k, v) in sol {
                        vars.insert(k.clone(), v.clone());
                    }
                    let env = Env::new(&vars, &probe.state);
                    if eval_conjunction(&ctx.constraints, &env).ok() != Some(false) {
                        return Err(format!(
                            "{}: emitted value {sol:?} does not violate the model",
                            step.action
                        ));
                    }
                    checked += 1;
                }
            }
            Err(EngineError::DomainExhausted { .. }) => {}
            Err(e) => return Err(e.to_string()),
        }
        let inv = session
            .invoke(&step.action, &args)
            .map_err(|e| e.to_string())?;
        match inv.verdict {
            Verdict::Ok(v) => {
                if let Some(name) = &step.bind {
                    bound.insert(name.clone(), v);
                }
            }
            other => return Err(format!("clean run failed at {}: {other:?}", step.action)),
        }
    }
    if checked == 0 {
        return Err("oracle re-checked no emitted values".to_string());
    }
    Ok(format!(
        "{} injections, 100% caught, 0% clean; {checked} values re-verified as violations",
        report.total()
    ))
}

// ------------------------------------------------------------------------
// criterion 5: raw fuzzing finds the seeded target bug
// ------------------------------------------------------------------------

fn criterion_raw_campaign() -> Result<String, String> {
    let scenario = demo_scenario();
    let budget = 20 * scenario.steps.len();
    let report = run_campaign(
        fs_program(),
        correct_fs(),
        &scenario,
        CampaignMode::Raw,
        budget,
        11,
        true,
    )
    .map_err(|e| e.to_string())?;
    if report.faulted() == 0 {
        return Err("no TARGET_FAULT observed".to_string());
    }
    let fd_confusion = report
        .injections
        .iter()
        .filter(|r| {
            r.action == "open" && matches!(r.outcome, InjectionOutcome::TargetFault { .. })
        })
        .count();
    if fd_confusion == 0 {
        return Err(format!(
            "faults observed ({:?}) but none attributable to an injected descriptor",
            report.distinct_faults
        ));
    }
    Ok(format!(
        "{} faults / {} injections, {} from confused descriptors; signatures: {:?}",
        report.faulted(),
        report.total(),
        fd_confusion,
        report.distinct_faults
    ))
}

// ------------------------------------------------------------------------
// criterion 6: mutation kill
// ------------------------------------------------------------------------

fn criterion_mutation_kill() -> Result<String, String> {
    // Mutant A tightens the short-read bound so a full-length read becomes
    // a violation; the validator conformance suite must notice.
    let mutant_a = FS_MODEL_SRC.replace("nread <= cnt", "nread < cnt");
    if mutant_a == FS_MODEL_SRC {
        return Err("mutant A is a no-op".to_string());
    }
    let prog_a = Arc::new(compile(&mutant_a, "fs").map_err(|e| format!("mutant A: {e}"))?);
    let mut backend = ValidatorBackend::new(prog_a, correct_fs()).map_err(|e| e.to_string())?;
    let report = run_suite(&mut backend, &fs_suite(), 0).map_err(|e| e.to_string())?;
    if report.all_passed() {
        return Err("mutant A survived the validator conformance suite".to_string());
    }

    // Mutant B drops the size bound so the mock may over-read past the
    // file size; the mock suite must notice.
    let bound_line = "  requires ((cnt >= avail) -> nread <= avail);\n";
    let mutant_b = FS_MODEL_SRC.replace(bound_line, "");
    if mutant_b == FS_MODEL_SRC {
        return Err("mutant B is a no-op".to_string());
    }
    let prog_b = Arc::new(compile(&mutant_b, "fs").map_err(|e| format!("mutant B: {e}"))?);
    let mut scripts = fs_suite();
    for s in &mut scripts {
        s.seeds = 10;
    }
    let mut mock = MockBackend::new(prog_b, 0).map_err(|e| e.to_string())?;
    let report = run_suite(&mut mock, &scripts, 0).map_err(|e| e.to_string())?;
    if report.all_passed() {
        return Err("mutant B survived the mock suite".to_string());
    }

    // Mutant C drops the fresh-descriptor constraint; the descriptor
    // confusion attack must stop being detected.
    let fresh_line = "  requires (fd_state(fd) == NULL);\n";
    let mutant_c = FS_MODEL_SRC.replace(fresh_line, "");
    if mutant_c == FS_MODEL_SRC {
        return Err("mutant C is a no-op".to_string());
    }
    let prog_c = Arc::new(compile(&mutant_c, "fs").map_err(|e| format!("mutant C: {e}"))?);
    let script = TestScript::parse(
        r#"{"name": "atk", "steps": [
            {"action": "open", "args": ["/a", 66, 420], "expect": ">= 0"},
            {"action": "open", "args": ["/b", 66, 420], "expect": ">= 0"}
        ]}"#,
    )
    .unwrap();
    let mut attacked = ValidatorBackend::new(prog_c, adversary(correct_fs(), AdversaryVariant::FdConfusion))
        .map_err(|e| e.to_string())?;
    if let Some(f) = run_script(&mut attacked, &script) {
        return Err(format!("mutant C still detects descriptor confusion: {f}"));
    }
    Ok("3/3 mutants killed by suite, mock, and attack-detection checks".to_string())
}

// ------------------------------------------------------------------------
// criterion 7: sync stress
// ------------------------------------------------------------------------

const STRESS_THREADS: usize = 8;
const STRESS_PAIRS: usize = 10_000;

fn stress<F>(label: &str, invoke: F) -> Result<Duration, String>
where
    F: Fn(&str, &[Value]) -> Result<i64, String> + Send + Sync,
{
    let start = Instant::now();
    if invoke("mutex_init", &[iv(1), iv(0)])? != 0 {
        return Err(format!("{label}: mutex_init failed"));
    }
    let held = AtomicBool::new(false);
    std::thread::scope(|scope| -> Result<(), String> {
        let mut handles = Vec::new();
        for t in 0..STRESS_THREADS {
            let tid = (t + 1) as i64;
            let invoke = &invoke;
            let held = &held;
            handles.push(scope.spawn(move || -> Result<(), String> {
                for _ in 0..STRESS_PAIRS {
                    if invoke("mutex_lock", &[iv(1), iv(tid)])? != 0 {
                        return Err(format!("{label}: lock returned nonzero"));
                    }
                    if held.swap(true, Ordering::SeqCst) {
                        return Err(format!("{label}: mutual exclusion broken"));
                    }
                    held.store(false, Ordering::SeqCst);
                    if invoke("mutex_unlock", &[iv(1), iv(tid)])? != 0 {
                        return Err(format!("{label}: unlock returned nonzero"));
                    }
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().map_err(|_| format!("{label}: worker panicked"))??;
        }
        Ok(())
    })?;
    let elapsed = start.elapsed();
    if elapsed >= Duration::from_secs(30) {
        return Err(format!("{label}: took {elapsed:.2?}, budget is 30s"));
    }
    Ok(elapsed)
}

fn criterion_sync_stress() -> Result<String, String> {
    let program = sync_program();

    let session = ValidatorSession::init_session(program.clone(), correct_sync(), &[])
        .map_err(|e| e.to_string())?;
    let t_validator = stress("validator", |action, args| {
        match session.invoke(action, args).map_err(|e| e.to_string())?.verdict {
            Verdict::Ok(v) => v.as_int().ok_or_else(|| "non-integer return".to_string()),
            other => Err(format!("violation under correct service: {other:?}")),
        }
    })?;

    let mock = MockSession::new(program, 1, &[]).map_err(|e| e.to_string())?;
    let t_mock = stress("mock", |action, args| {
        match mock.mock_invoke(action, args).map_err(|e| e.to_string())?.verdict {
            Verdict::Ok(v) => v.as_int().ok_or_else(|| "non-integer return".to_string()),
            other => Err(format!("mock verdict: {other:?}")),
        }
    })?;

    Ok(format!(
        "{STRESS_THREADS} threads x {STRESS_PAIRS} pairs: validator {t_validator:.2?}, mock {t_mock:.2?}, exclusion held"
    ))
}

// ------------------------------------------------------------------------
// criterion 8: solver oracle agreement
// ------------------------------------------------------------------------

fn criterion_solver_oracle() -> Result<String, String> {
    let state = StateStore::new(&[]);
    let mut rng = ChaCha20Rng::seed_from_u64(2026);
    for case in 0..1000u64 {
        let cs = vec![bool_expr(&mut rng, &["c", "d"], 3)];
        let bf = brute_force(&cs, &["c", "d"], &state);
        let unknowns = vec![int_unknown("c"), int_unknown("d")];
        let req = |mode| SolveRequest {
            constraints: cs.clone(),
            unknowns: unknowns.clone(),
            bindings: BTreeMap::new(),
            state: &state,
            seed: case,
            mode,
            hints: None,
            max_solutions: 2,
        };
        match solve(&req(SolveMode::Satisfy)) {
            SolveResult::Solutions(sols) => {
                if bf.sat.is_empty() {
                    return Err(format!("case {case}: solver sat, oracle unsat"));
                }
                for s in &sols {
                    if truth_of(&cs, s, &state) != Some(true) {
                        return Err(format!("case {case}: claimed model {s:?} is false"));
                    }
                }
            }
            _ => {
                if !bf.sat.is_empty() {
                    return Err(format!("case {case}: solver unsat, oracle sat"));
                }
            }
        }
        match solve_violations(&req(SolveMode::Violate)) {
            SolveResult::Solutions(sols) => {
                if bf.unsat.is_empty() {
                    return Err(format!("case {case}: violation without oracle witness"));
                }
                for s in &sols {
                    if truth_of(&cs, s, &state) != Some(false) {
                        return Err(format!("case {case}: claimed violation {s:?} is true"));
                    }
                }
            }
            _ => {
                if !bf.unsat.is_empty() {
                    return Err(format!("case {case}: exhausted but oracle violates"));
                }
            }
        }
    }
    Ok("1000 random cases, zero disagreements with brute force".to_string())
}

// ------------------------------------------------------------------------
// criterion 9: determinism and replay
// ------------------------------------------------------------------------

#[derive(Clone, Default)]
struct SharedBuf(Arc<Mutex<Vec<u8>>>);

impl Write for SharedBuf {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.0.lock().unwrap().extend_from_slice(buf);
        Ok(buf.len())
    }

    fn flush(&mut self) -> std::io::Result<()> {
        Ok(())
    }
}

fn record_trace(script: &TestScript) -> Result<String, String> {
    let buf = SharedBuf::default();
    let session = ValidatorSession::init_session(fs_program(), correct_fs(), &[])
        .map_err(|e| e.to_string())?
        .with_trace(Box::new(buf.clone()))
        .map_err(|e| e.to_string())?;
    let mut backend = SessionBackend { session };
    if let Some(f) = run_script(&mut backend, script) {
        return Err(format!("traced script failed: {f}"));
    }
    let bytes = buf.0.lock().unwrap().clone();
    String::from_utf8(bytes).map_err(|e| e.to_string())
}

fn criterion_determinism_replay() -> Result<String, String> {
    // Fixed-seed campaigns must serialize byte-identically.
    let scenario = demo_scenario();
    let campaign = |seed| {
        run_campaign(
            fs_program(),
            correct_fs(),
            &scenario,
            CampaignMode::Shielded,
            40,
            seed,
            true,
        )
        .map(|r| r.to_json().to_string())
        .map_err(|e| e.to_string())
    };
    if campaign(7)? != campaign(7)? {
        return Err("same-seed campaign reports differ".to_string());
    }

    // Fixed-seed mock suite runs must be identical outcome-for-outcome.
    let suite = fs_suite();
    let mock_run = || -> Result<String, String> {
        let mut mock = MockBackend::new(fs_program(), 3).map_err(|e| e.to_string())?;
        let report = run_suite(&mut mock, &suite, 3).map_err(|e| e.to_string())?;
        Ok(format!("{:?}", report.outcomes))
    };
    if mock_run()? != mock_run()? {
        return Err("same-seed mock suite runs differ".to_string());
    }

    // Traces are byte-identical and replay reproduces every verdict.
    let trace = record_trace(&demo_scenario())?;
    if trace != record_trace(&demo_scenario())? {
        return Err("fixed-input traces are not byte-identical".to_string());
    }
    let report = replay(fs_program(), &trace).map_err(|e| e.to_string())?;
    if !report.matches {
        return Err("replayed verdicts differ from the recorded run".to_string());
    }
    Ok(format!(
        "campaign/suite runs byte-identical; replay reproduced {} verdicts",
        report.verdicts.len()
    ))
}

// ------------------------------------------------------------------------

#[test]
fn acceptance() {
    let criteria: Vec<(&str, fn() -> Result<String, String>)> = vec![
        ("conformance soundness", criterion_conformance),
        ("mock fidelity", criterion_mock_fidelity),
        ("attack detection", criterion_attack_detection),
        ("fuzz/validator duality", criterion_shielded_campaign),
        ("raw fuzzing finds target bug", criterion_raw_campaign),
        ("mutation kill", criterion_mutation_kill),
        ("sync stress", criterion_sync_stress),
        ("solver oracle", criterion_solver_oracle),
        ("determinism & replay", criterion_determinism_replay),
    ];
    let mut failed = Vec::new();
    for (i, (name, run)) in criteria.iter().enumerate() {
        match run() {
            Ok(detail) => println!("criterion {} ({name}): PASS - {detail}", i + 1),
            Err(detail) => {
                println!("criterion {} ({name}): FAIL - {detail}", i + 1);
                failed.push(format!("criterion {} ({name}): {detail}", i + 1));
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria:\n{}", failed.join("\n"));
}
