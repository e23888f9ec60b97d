//! `gk` — drive GKSpec service models: check them, validate or mock call
//! suites, fuzz a scenario, or replay a recorded trace.
//!
//! Exit codes: 0 success, 1 validation failure / violation / mismatch,
//! 2 usage or input errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use gk_core::frontend::{compile, TypedModelProgram};
use gk_core::fuzz::{run_campaign, CampaignMode};
use gk_core::harness::{
    load_dir, run_script, run_suite, MockBackend, SessionBackend, TestScript, ValidatorBackend,
};
use gk_core::models::bundled_source;
use gk_core::service::{correct_fs, correct_sync, ServiceBinding};
use gk_core::validator::{replay, ValidatorSession};

#[derive(Parser)]
#[command(name = "gk", version, about = "Model-guarded untrusted-service toolkit")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ModeArg {
    Shielded,
    Raw,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum HintsArg {
    On,
    Off,
}

#[derive(Subcommand)]
enum Cmd {
    /// Parse and type-check a model; print a summary.
    Check {
        /// Bundled model name (`fs`, `sync`) or path to a `.gk` file.
        model: String,
    },
    /// Run conformance scripts through the validator over the correct
    /// in-process service.
    Validate {
        #[arg(long)]
        model: String,
        /// Directory of `*.json` scripts.
        #[arg(long, conflicts_with = "script")]
        suite: Option<PathBuf>,
        /// A single script file.
        #[arg(long)]
        script: Option<PathBuf>,
        /// Record a JSONL trace (single --script runs only).
        #[arg(long, requires = "script")]
        trace: Option<PathBuf>,
        /// Which correct service to bind (`fs` or `sync`); defaults to the
        /// model name.
        #[arg(long)]
        service: Option<String>,
    },
    /// Run conformance scripts on the constraint-solving mock.
    Mock {
        #[arg(long)]
        model: String,
        #[arg(long, conflicts_with = "script")]
        suite: Option<PathBuf>,
        #[arg(long)]
        script: Option<PathBuf>,
        /// Base RNG seed (falls back to $GK_SEED, then 0).
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fuzz a scenario: inject model-violating service outputs.
    Fuzz {
        #[arg(long)]
        model: String,
        /// Scenario script whose untrusted calls are attacked.
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long, value_enum, default_value_t = ModeArg::Shielded)]
        mode: ModeArg,
        /// Total number of injections.
        #[arg(long, default_value_t = 20)]
        budget: usize,
        #[arg(long)]
        seed: Option<u64>,
        /// Honor `fuzz { requires(...); }` model hints.
        #[arg(long, value_enum, default_value_t = HintsArg::On)]
        hints: HintsArg,
        #[arg(long)]
        service: Option<String>,
    },
    /// Re-execute a recorded trace and compare verdicts.
    Replay {
        #[arg(long)]
        model: String,
        #[arg(long)]
        trace: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("gk: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_model(spec: &str) -> Result<Arc<TypedModelProgram>, String> {
    let (source, name): (String, String) = match bundled_source(spec) {
        Some(src) => (src.to_string(), spec.to_string()),
        None => {
            let path = Path::new(spec);
            if !path.exists() {
                return Err(format!(
                    "`{spec}` is neither a bundled model (fs, sync) nor an existing file"
                ));
            }
            let src = std::fs::read_to_string(path)
                .map_err(|e| format!("cannot read {spec}: {e}"))?;
            let name = path
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("model")
                .to_string();
            (src, name)
        }
    };
    compile(&source, &name)
        .map(Arc::new)
        .map_err(|d| format!("{name}: {d}"))
}

fn pick_service(
    model: &TypedModelProgram,
    service: Option<&str>,
) -> Result<Arc<dyn ServiceBinding>, String> {
    let name = service.unwrap_or(model.program.name.as_str());
    match name {
        "fs" => Ok(correct_fs()),
        "sync" => Ok(correct_sync()),
        other => Err(format!(
            "no bundled service `{other}`; pass --service fs|sync"
        )),
    }
}

fn seed_of(cli_seed: Option<u64>) -> u64 {
    cli_seed
        .or_else(|| std::env::var("GK_SEED").ok().and_then(|s| s.parse().ok()))
        .unwrap_or(0)
}

fn load_scripts(
    suite: Option<&PathBuf>,
    script: Option<&PathBuf>,
) -> Result<Vec<TestScript>, String> {
    match (suite, script) {
        (Some(dir), None) => load_dir(dir),
        (None, Some(file)) => {
            let src = std::fs::read_to_string(file)
                .map_err(|e| format!("cannot read {}: {e}", file.display()))?;
            Ok(vec![TestScript::parse(&src).map_err(|e| format!("{}: {e}", file.display()))?])
        }
        _ => Err("pass exactly one of --suite or --script".to_string()),
    }
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.cmd {
        Cmd::Check { model } => {
            let program = load_model(&model)?;
            let summary = serde_json::json!({
                "model": program.program.name,
                "maps": program.program.maps.len(),
                "actions": program.program.actions.len(),
                "ok": true,
            });
            println!("{summary}");
            eprintln!(
                "model `{}` OK: {} map(s), {} action(s)",
                program.program.name,
                program.program.maps.len(),
                program.program.actions.len()
            );
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Validate { model, suite, script, trace, service } => {
            let program = load_model(&model)?;
            let binding = pick_service(&program, service.as_deref())?;
            let scripts = load_scripts(suite.as_ref(), script.as_ref())?;
            if let Some(trace_path) = trace {
                let sink = std::fs::File::create(&trace_path)
                    .map_err(|e| format!("cannot create {}: {e}", trace_path.display()))?;
                let session = ValidatorSession::init_session(program, binding, &[])
                    .and_then(|s| s.with_trace(Box::new(sink)))
                    .map_err(|e| e.to_string())?;
                let mut backend = SessionBackend { session };
                let failure = run_script(&mut backend, &scripts[0]);
                let report = serde_json::json!({
                    "script": scripts[0].name,
                    "passed": failure.is_none(),
                    "failure": failure.as_ref().map(|f| f.to_string()),
                    "trace": trace_path.display().to_string(),
                });
                println!("{report}");
                eprintln!(
                    "validate {}: {}",
                    scripts[0].name,
                    failure.as_ref().map_or("PASS".to_string(), |f| format!("FAIL ({f})"))
                );
                return Ok(if failure.is_none() {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                });
            }
            let mut backend =
                ValidatorBackend::new(program, binding).map_err(|e| e.to_string())?;
            let report = run_suite(&mut backend, &scripts, 0).map_err(|e| e.to_string())?;
            println!("{}", report.to_json());
            eprintln!("validate: {}/{} passed", report.passed(), report.outcomes.len());
            Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Mock { model, suite, script, seed } => {
            let program = load_model(&model)?;
            let scripts = load_scripts(suite.as_ref(), script.as_ref())?;
            let base = seed_of(seed);
            let mut backend = MockBackend::new(program, base).map_err(|e| e.to_string())?;
            let report = run_suite(&mut backend, &scripts, base).map_err(|e| e.to_string())?;
            println!("{}", report.to_json());
            eprintln!("mock: {}/{} passed", report.passed(), report.outcomes.len());
            Ok(if report.all_passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Fuzz { model, scenario, mode, budget, seed, hints, service } => {
            let program = load_model(&model)?;
            let binding = pick_service(&program, service.as_deref())?;
            let src = std::fs::read_to_string(&scenario)
                .map_err(|e| format!("cannot read {}: {e}", scenario.display()))?;
            let scen = TestScript::parse(&src)
                .map_err(|e| format!("{}: {e}", scenario.display()))?;
            let mode = match mode {
                ModeArg::Shielded => CampaignMode::Shielded,
                ModeArg::Raw => CampaignMode::Raw,
            };
            let report = run_campaign(
                program,
                binding,
                &scen,
                mode,
                budget,
                seed_of(seed),
                hints == HintsArg::On,
            )
            .map_err(|e| e.to_string())?;
            println!("{}", report.to_json());
            let escaped = report.total() - report.caught() - report.faulted();
            eprintln!(
                "fuzz ({:?}): {} injection(s), {} caught, {} target fault(s), {} clean",
                mode,
                report.total(),
                report.caught(),
                report.faulted(),
                escaped
            );
            let failed = match mode {
                CampaignMode::Shielded => report.caught() != report.total(),
                CampaignMode::Raw => false,
            };
            Ok(if failed { ExitCode::FAILURE } else { ExitCode::SUCCESS })
        }
        Cmd::Replay { model, trace } => {
            let program = load_model(&model)?;
            let content = std::fs::read_to_string(&trace)
                .map_err(|e| format!("cannot read {}: {e}", trace.display()))?;
            let report = replay(program, &content).map_err(|e| e.to_string())?;
            let out = serde_json::json!({
                "events": report.verdicts.len(),
                "matches": report.matches,
                "verdicts": report.verdicts.iter().map(|v| v.to_json()).collect::<Vec<_>>(),
            });
            println!("{out}");
            eprintln!(
                "replay: {} event(s), verdicts {}",
                report.verdicts.len(),
                if report.matches { "match" } else { "MISMATCH" }
            );
            Ok(if report.matches { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
    }
}
