//! Solver unit tests: interval narrowing, boundary extraction, hint-guided
//! violation search, array structural solving, and spot agreement with the
//! brute-force oracle.

mod common;

use std::collections::BTreeMap;

use gk_core::constraint::{
    solve, solve_violations, SolveMode, SolveRequest, SolveResult, Unknown,
};
use gk_core::frontend::{compile, ArrElem, GkType, IntKind};
use gk_core::state::{StateStore, Value};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

use common::{bool_expr, brute_force, int_unknown, truth_of};

/// Compile a one-action model whose requires clauses are the constraints
/// under test; much more readable than hand-building ASTs.
fn constraints_of(requires: &[&str]) -> Vec<gk_core::frontend::Expr> {
    let body: String = requires
        .iter()
        .map(|r| format!("  requires ({r});\n"))
        .collect();
    let src = format!(
        "Map m(k: int) returns (v: int);\n\
         action a(c: int, d: int) returns (r: ssize_t, buf: void[], s: ssize_t) := {{\n\
         pat: char[] := \"abc\";\n\
         r := extern call untrusted_a(c, d, buf);\n\
         {body}\
         return r;\n}}\n"
    );
    let prog = compile(&src, "t").expect("constraint template compiles");
    let action = prog.program.action("a").unwrap();
    let mut out = Vec::new();
    collect_requires(&action.body, &mut out);
    out
}

fn collect_requires(body: &[gk_core::frontend::Stmt], out: &mut Vec<gk_core::frontend::Expr>) {
    use gk_core::frontend::Stmt;
    for s in body {
        match s {
            Stmt::Requires { cond, .. } => out.push(cond.clone()),
            Stmt::Atomic { body, .. } => collect_requires(body, out),
            Stmt::If { then, els, .. } => {
                collect_requires(then, out);
                collect_requires(els, out);
            }
            _ => {}
        }
    }
}

fn empty_state() -> StateStore {
    StateStore::new(&[])
}

fn req<'a>(
    constraints: Vec<gk_core::frontend::Expr>,
    unknowns: Vec<Unknown>,
    bindings: BTreeMap<String, Value>,
    state: &'a StateStore,
    mode: SolveMode,
    max: usize,
) -> SolveRequest<'a> {
    SolveRequest {
        constraints,
        unknowns,
        bindings,
        state,
        seed: 7,
        mode,
        hints: None,
        max_solutions: max,
    }
}

#[test]
fn pins_exact_equality() {
    let state = empty_state();
    let cs = constraints_of(&["r == 13"]);
    let r = solve(&req(
        cs,
        vec![Unknown::new("r", GkType::Int(IntKind::SsizeT))],
        BTreeMap::new(),
        &state,
        SolveMode::Satisfy,
        3,
    ));
    match r {
        SolveResult::Solutions(sols) => {
            assert_eq!(sols.len(), 1);
            assert_eq!(sols[0]["r"].as_int(), Some(13));
        }
        other => panic!("expected a pinned solution, got {other:?}"),
    }
}

#[test]
fn detects_empty_interval() {
    let state = empty_state();
    let cs = constraints_of(&["r > 10 and r < 5"]);
    let r = solve(&req(
        cs,
        vec![Unknown::new("r", GkType::Int(IntKind::SsizeT))],
        BTreeMap::new(),
        &state,
        SolveMode::Satisfy,
        1,
    ));
    assert_eq!(r, SolveResult::Unsat);
}

#[test]
fn narrows_against_bindings() {
    let state = empty_state();
    let cs = constraints_of(&["r >= 0 and r <= c"]);
    let mut bindings = BTreeMap::new();
    bindings.insert("c".to_string(), Value::Int(IntKind::Int, 2));
    let r = solve(&req(
        cs,
        vec![Unknown::new("r", GkType::Int(IntKind::SsizeT))],
        bindings,
        &state,
        SolveMode::Satisfy,
        16,
    ));
    match r {
        SolveResult::Solutions(sols) => {
            let mut got: Vec<i64> = sols.iter().map(|s| s["r"].as_int().unwrap()).collect();
            got.sort_unstable();
            assert_eq!(got, vec![0, 1, 2]);
        }
        other => panic!("expected exactly {{0,1,2}}, got {other:?}"),
    }
}

#[test]
fn violations_falsify_the_conjunction() {
    let state = empty_state();
    let cs = constraints_of(&["r >= 0 and r <= 10"]);
    let r = solve_violations(&req(
        cs.clone(),
        vec![Unknown::new("r", GkType::Int(IntKind::SsizeT))],
        BTreeMap::new(),
        &state,
        SolveMode::Violate,
        8,
    ));
    match r {
        SolveResult::Solutions(sols) => {
            assert!(!sols.is_empty());
            for s in sols {
                assert_eq!(truth_of(&cs, &s, &state), Some(false));
            }
        }
        other => panic!("expected violating solutions, got {other:?}"),
    }
}

#[test]
fn tautology_is_domain_exhausted() {
    let state = empty_state();
    let cs = constraints_of(&["r == r"]);
    let r = solve_violations(&req(
        cs,
        vec![int_unknown("r")],
        BTreeMap::new(),
        &state,
        SolveMode::Violate,
        4,
    ));
    assert_eq!(r, SolveResult::DomainExhausted);
}

#[test]
fn hints_steer_violation_order() {
    let state = empty_state();
    let cs = constraints_of(&["r >= 0 and r <= 10"]);
    let hints = constraints_of(&["r >= -131"]).pop();
    let mut rq = req(
        cs,
        vec![int_unknown("r")],
        BTreeMap::new(),
        &state,
        SolveMode::Violate,
        5,
    );
    rq.hints = hints;
    match solve_violations(&rq) {
        SolveResult::Solutions(sols) => {
            // The first solution must satisfy the hint in addition to
            // violating the constraints.
            let first = sols[0]["r"].as_int().unwrap();
            assert!(first >= -131, "hint pass should come first, got {first}");
            assert!(!(0..=10).contains(&first));
        }
        other => panic!("expected hinted violations, got {other:?}"),
    }
}

#[test]
fn solves_arrays_structurally() {
    let state = empty_state();
    // buf must reproduce a bound prefix; ints are solved first, arrays
    // derived from the equalities.
    let cs = constraints_of(&["r >= 0 and r <= 3", "buf[0:r] == pat[0:r]"]);
    let mut bindings = BTreeMap::new();
    bindings.insert(
        "pat".to_string(),
        Value::Arr(ArrElem::Int(IntKind::Char), vec![97, 98, 99]),
    );
    let r = solve(&req(
        cs.clone(),
        vec![
            Unknown::new("r", GkType::Int(IntKind::SsizeT)),
            Unknown::new("buf", GkType::Array(ArrElem::Void)),
        ],
        bindings.clone(),
        &state,
        SolveMode::Satisfy,
        12,
    ));
    match r {
        SolveResult::Solutions(sols) => {
            assert!(!sols.is_empty());
            for s in &sols {
                let mut full = bindings.clone();
                full.extend(s.clone());
                assert_eq!(truth_of(&cs, &full, &state), Some(true));
                let n = s["r"].as_int().unwrap();
                if let Value::Arr(_, xs) = &s["buf"] {
                    let want: Vec<i64> = "abc".bytes().take(n as usize).map(|b| b as i64).collect();
                    assert_eq!(&xs[..n as usize], &want[..]);
                } else {
                    panic!("buf must solve to an array");
                }
            }
        }
        other => panic!("expected array solutions, got {other:?}"),
    }
}

#[test]
fn respects_max_solutions() {
    let state = empty_state();
    let cs = constraints_of(&["r >= 0 and r <= 30"]);
    let r = solve(&req(
        cs,
        vec![int_unknown("r")],
        BTreeMap::new(),
        &state,
        SolveMode::Satisfy,
        4,
    ));
    match r {
        SolveResult::Solutions(sols) => assert_eq!(sols.len(), 4),
        other => panic!("expected 4 solutions, got {other:?}"),
    }
}

#[test]
fn brute_force_spot_agreement() {
    let state = empty_state();
    let mut rng = ChaCha20Rng::seed_from_u64(99);
    for case in 0..100u64 {
        let expr = bool_expr(&mut rng, &["c", "d"], 3);
        let cs = vec![expr];
        let bf = brute_force(&cs, &["c", "d"], &state);
        let unknowns = vec![int_unknown("c"), int_unknown("d")];

        let sat = solve(&req(
            cs.clone(),
            unknowns.clone(),
            BTreeMap::new(),
            &state,
            SolveMode::Satisfy,
            2,
        ));
        match sat {
            SolveResult::Solutions(sols) => {
                assert!(!bf.sat.is_empty(), "case {case}: solver sat but oracle unsat");
                for s in sols {
                    assert_eq!(truth_of(&cs, &s, &state), Some(true), "case {case}");
                }
            }
            _ => assert!(bf.sat.is_empty(), "case {case}: solver unsat but oracle sat"),
        }

        let vio = solve_violations(&req(
            cs.clone(),
            unknowns,
            BTreeMap::new(),
            &state,
            SolveMode::Violate,
            2,
        ));
        match vio {
            SolveResult::Solutions(sols) => {
                assert!(!bf.unsat.is_empty(), "case {case}: violation without oracle witness");
                for s in sols {
                    assert_eq!(truth_of(&cs, &s, &state), Some(false), "case {case}");
                }
            }
            _ => assert!(bf.unsat.is_empty(), "case {case}: solver exhausted but oracle violates"),
        }
    }
}
