//! Shared helpers for integration tests: a random constraint generator over
//! bounded integer unknowns plus a brute-force satisfiability oracle.

use std::collections::BTreeMap;

use gk_core::constraint::{eval_conjunction, Env};
use gk_core::frontend::token::Span;
use gk_core::frontend::{BinOp, Expr, ExprKind, GkType, IntKind, UnOp};
use gk_core::state::{StateStore, Value};
use rand::Rng;
use rand_chacha::ChaCha20Rng;

pub const DOMAIN_LO: i64 = -40;
pub const DOMAIN_HI: i64 = 40;

fn e(kind: ExprKind) -> Expr {
    Expr::new(kind, Span::default())
}

fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Expr {
    e(ExprKind::Binary { op, lhs: Box::new(lhs), rhs: Box::new(rhs) })
}

/// A random integer-valued expression over the named unknowns.
fn int_expr(rng: &mut ChaCha20Rng, unknowns: &[&str], depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.4) {
        if rng.gen_bool(0.5) {
            let u = unknowns[rng.gen_range(0..unknowns.len())];
            return e(ExprKind::Ident(u.to_string()));
        }
        return e(ExprKind::IntLit(rng.gen_range(-50i128..=50)));
    }
    let op = match rng.gen_range(0..5) {
        0 => BinOp::Add,
        1 => BinOp::Sub,
        2 => BinOp::Mul,
        3 => BinOp::Div,
        _ => BinOp::Mod,
    };
    let lhs = int_expr(rng, unknowns, depth - 1);
    let rhs = int_expr(rng, unknowns, depth - 1);
    bin(op, lhs, rhs)
}

/// A random boolean-valued constraint over the named unknowns.
pub fn bool_expr(rng: &mut ChaCha20Rng, unknowns: &[&str], depth: u32) -> Expr {
    if depth == 0 || rng.gen_bool(0.35) {
        let op = match rng.gen_range(0..6) {
            0 => BinOp::Eq,
            1 => BinOp::Ne,
            2 => BinOp::Lt,
            3 => BinOp::Le,
            4 => BinOp::Gt,
            _ => BinOp::Ge,
        };
        let lhs = int_expr(rng, unknowns, 2);
        let rhs = int_expr(rng, unknowns, 2);
        return bin(op, lhs, rhs);
    }
    match rng.gen_range(0..4) {
        0 => {
            let inner = bool_expr(rng, unknowns, depth - 1);
            e(ExprKind::Unary { op: UnOp::Not, inner: Box::new(inner) })
        }
        1 => bin(
            BinOp::And,
            bool_expr(rng, unknowns, depth - 1),
            bool_expr(rng, unknowns, depth - 1),
        ),
        2 => bin(
            BinOp::Or,
            bool_expr(rng, unknowns, depth - 1),
            bool_expr(rng, unknowns, depth - 1),
        ),
        _ => bin(
            BinOp::Implies,
            bool_expr(rng, unknowns, depth - 1),
            bool_expr(rng, unknowns, depth - 1),
        ),
    }
}

pub struct BruteForce {
    /// Tuples (in unknown order) on which the conjunction evaluates true.
    pub sat: Vec<Vec<i64>>,
    /// Tuples on which it evaluates false.
    pub unsat: Vec<Vec<i64>>,
}

/// Exhaustively evaluate the conjunction over the full unknown domain.
/// Tuples on which evaluation errors (overflow, division by zero) belong to
/// neither set, matching the solver's rejection of erroring assignments.
pub fn brute_force(constraints: &[Expr], unknowns: &[&str], state: &StateStore) -> BruteForce {
    let mut out = BruteForce { sat: Vec::new(), unsat: Vec::new() };
    let n = unknowns.len();
    let width = (DOMAIN_HI - DOMAIN_LO + 1) as usize;
    let total = width.pow(n as u32);
    for mut ix in 0..total {
        let mut tuple = Vec::with_capacity(n);
        let mut vars: BTreeMap<String, Value> = BTreeMap::new();
        for u in unknowns {
            let v = DOMAIN_LO + (ix % width) as i64;
            ix /= width;
            tuple.push(v);
            vars.insert(u.to_string(), Value::Int(IntKind::Int, v));
        }
        let env = Env::new(&vars, state);
        match eval_conjunction(constraints, &env) {
            Ok(true) => out.sat.push(tuple),
            Ok(false) => out.unsat.push(tuple),
            Err(_) => {}
        }
    }
    out
}

/// Evaluate one solved assignment against the constraints.
pub fn truth_of(
    constraints: &[Expr],
    asg: &BTreeMap<String, Value>,
    state: &StateStore,
) -> Option<bool> {
    let env = Env::new(asg, state);
    eval_conjunction(constraints, &env).ok()
}

pub fn int_unknown(name: &str) -> gk_core::constraint::Unknown {
    gk_core::constraint::Unknown::bounded(name, GkType::Int(IntKind::Int), DOMAIN_LO, DOMAIN_HI)
}
