//! Bounded-domain constraint solver.
//!
//! Strategy: interval propagation for linear single-unknown comparisons,
//! "interesting value" extraction from comparison boundaries, seeded random
//! sampling, and full enumeration when the candidate product is small.
//! Array unknowns are solved structurally from slice/index equalities.
//! Every returned assignment is re-evaluated before being returned, so the
//! promised truth value is checked by construction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::frontend::ast::{ArrElem, BinOp, Expr, ExprKind, GkType, IntKind};
use crate::state::{StateStore, Value};

use super::eval::{eval, eval_bool, eval_conjunction, Env, MAX_ARRAY_LEN};

/// An output variable to solve for, with its finite integer domain.
#[derive(Debug, Clone)]
pub struct Unknown {
    pub name: String,
    pub ty: GkType,
    /// Inclusive integer domain bounds (ignored for arrays/strings).
    pub lo: i64,
    pub hi: i64,
}

impl Unknown {
    /// Default domain: [-2^31, 2^31) intersected with the declared width.
    pub fn new(name: &str, ty: GkType) -> Unknown {
        let (mut lo, mut hi) = (-(1i64 << 31), (1i64 << 31) - 1);
        if let GkType::Int(k) = ty {
            lo = lo.max(k.min() as i64);
            hi = hi.min(k.max() as i64);
        }
        Unknown {
            name: name.to_string(),
            ty,
            lo,
            hi,
        }
    }

    pub fn bounded(name: &str, ty: GkType, lo: i64, hi: i64) -> Unknown {
        Unknown {
            name: name.to_string(),
            ty,
            lo,
            hi,
        }
    }

    fn is_int(&self) -> bool {
        matches!(self.ty, GkType::Int(_))
    }

    fn is_array(&self) -> bool {
        matches!(self.ty, GkType::Array(_))
    }

    fn int_kind(&self) -> IntKind {
        match self.ty {
            GkType::Int(k) => k,
            _ => IntKind::SsizeT,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveMode {
    Satisfy,
    Violate,
}

/// One solved assignment: unknown name -> concrete value.
pub type Assignment = BTreeMap<String, Value>;

pub struct SolveRequest<'a> {
    pub constraints: Vec<Expr>,
    pub unknowns: Vec<Unknown>,
    pub bindings: BTreeMap<String, Value>,
    pub state: &'a StateStore,
    pub seed: u64,
    pub mode: SolveMode,
    /// Soft preferences (VIOLATE mode): solutions satisfying these come first.
    pub hints: Option<Expr>,
    pub max_solutions: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveResult {
    Solutions(Vec<Assignment>),
    Unsat,
    DomainExhausted,
}

/// Solve for assignments making every constraint true.
pub fn solve(req: &SolveRequest) -> SolveResult {
    assert_eq!(req.mode, SolveMode::Satisfy);
    run(req)
}

/// Solve for assignments falsifying the conjunction of the constraints.
pub fn solve_violations(req: &SolveRequest) -> SolveResult {
    assert_eq!(req.mode, SolveMode::Violate);
    run(req)
}

/// Sampling budget for large domains.
const SAMPLES_PER_UNKNOWN: usize = 64;
/// Full-enumeration threshold on the candidate-tuple product.
const ENUM_LIMIT: u128 = 1 << 16;
/// Random-tuple probe budget when the product is too large to enumerate.
const TUPLE_TRIES: usize = 8192;

fn run(req: &SolveRequest) -> SolveResult {
    let mut rng = ChaCha20Rng::seed_from_u64(req.seed);

    // Trivial case: nothing to solve for.
    if req.unknowns.is_empty() {
        let env = Env::new(&req.bindings, req.state);
        let truth = eval_conjunction(&req.constraints, &env);
        return match (req.mode, truth) {
            (SolveMode::Satisfy, Ok(true)) => SolveResult::Solutions(vec![Assignment::new()]),
            (SolveMode::Satisfy, _) => SolveResult::Unsat,
            (SolveMode::Violate, Ok(false)) => SolveResult::Solutions(vec![Assignment::new()]),
            (SolveMode::Violate, _) => SolveResult::DomainExhausted,
        };
    }

    let int_unknowns: Vec<&Unknown> = req.unknowns.iter().filter(|u| u.is_int()).collect();
    let arr_unknowns: Vec<&Unknown> = req.unknowns.iter().filter(|u| u.is_array()).collect();
    let str_unknowns: Vec<&Unknown> = req
        .unknowns
        .iter()
        .filter(|u| matches!(u.ty, GkType::Str))
        .collect();

    // Per-int-unknown candidate lists.
    let mut cand_lists: Vec<Vec<i64>> = Vec::new();
    for u in &int_unknowns {
        match int_candidates(req, u, &mut rng) {
            Some(c) => cand_lists.push(c),
            None => {
                // Propagated interval is empty: nothing satisfies.
                return match req.mode {
                    SolveMode::Satisfy => SolveResult::Unsat,
                    SolveMode::Violate => SolveResult::DomainExhausted,
                };
            }
        }
    }
    let str_cands: Vec<Vec<String>> = str_unknowns
        .iter()
        .map(|u| string_candidates(req, u))
        .collect();

    // Tuple iteration order: exhaustive + shuffled when small, else random.
    let mut lens: Vec<usize> = cand_lists.iter().map(|c| c.len()).collect();
    lens.extend(str_cands.iter().map(|c| c.len()));
    let product: u128 = lens.iter().map(|&l| l.max(1) as u128).product();
    let exhaustive = product <= ENUM_LIMIT;
    let tuples: Vec<Vec<usize>> = if exhaustive {
        let mut all = Vec::with_capacity(product as usize);
        let mut idx = vec![0usize; lens.len()];
        loop {
            all.push(idx.clone());
            let mut i = lens.len();
            loop {
                if i == 0 {
                    break;
                }
                i -= 1;
                idx[i] += 1;
                if idx[i] < lens[i].max(1) {
                    break;
                }
                idx[i] = 0;
                if i == 0 {
                    // wrapped all the way around
                    idx.clear();
                    break;
                }
            }
            if idx.is_empty() {
                break;
            }
            if all.len() >= product as usize {
                break;
            }
        }
        all.shuffle(&mut rng);
        all
    } else {
        let mut seen = BTreeSet::new();
        let mut all = Vec::new();
        for _ in 0..TUPLE_TRIES {
            let t: Vec<usize> = lens
                .iter()
                .map(|&l| if l <= 1 { 0 } else { rng.gen_range(0..l) })
                .collect();
            if seen.insert(t.clone()) {
                all.push(t);
            }
        }
        all
    };

    // Two passes in VIOLATE mode when hints are present: hint-satisfying
    // solutions first, then the rest.
    let passes: &[bool] = match (req.mode, &req.hints) {
        (SolveMode::Violate, Some(_)) => &[true, false],
        _ => &[false],
    };

    let mut found: Vec<Assignment> = Vec::new();
    let mut found_set: BTreeSet<String> = BTreeSet::new();
    for &hint_pass in passes {
        for tuple in &tuples {
            if found.len() >= req.max_solutions {
                break;
            }
            // Build the integer/string part of the assignment.
            let mut asg = Assignment::new();
            for (i, u) in int_unknowns.iter().enumerate() {
                let v = cand_lists[i][tuple[i]];
                asg.insert(u.name.clone(), Value::Int(u.int_kind(), v));
            }
            for (j, u) in str_unknowns.iter().enumerate() {
                let v = &str_cands[j][tuple[int_unknowns.len() + j]];
                asg.insert(u.name.clone(), Value::Str(v.clone()));
            }
            // Array unknowns: structural solution given the scalar part,
            // plus tampered variants in VIOLATE mode.
            let arr_variants = array_variants(req, &arr_unknowns, &asg, &mut rng);
            for variant in arr_variants {
                if found.len() >= req.max_solutions {
                    break;
                }
                let mut full = asg.clone();
                for (n, v) in variant {
                    full.insert(n, v);
                }
                if !accepts(req, &full, hint_pass) {
                    continue;
                }
                let key = assignment_key(&full);
                if found_set.insert(key) {
                    found.push(full);
                }
            }
        }
        if found.len() >= req.max_solutions {
            break;
        }
    }

    // Built-in oracle: only keep assignments that re-evaluate as promised.
    found.retain(|a| accepts(req, a, false));

    if found.is_empty() {
        return match req.mode {
            SolveMode::Satisfy => SolveResult::Unsat,
            SolveMode::Violate => SolveResult::DomainExhausted,
        };
    }
    SolveResult::Solutions(found)
}

fn assignment_key(a: &Assignment) -> String {
    let mut s = String::new();
    for (k, v) in a {
        s.push_str(k);
        s.push('=');
        s.push_str(&v.to_json().to_string());
        s.push(';');
    }
    s
}

/// Does the assignment meet the mode's truth requirement (and the hint, when
/// `need_hint` is set)?
fn accepts(req: &SolveRequest, asg: &Assignment, need_hint: bool) -> bool {
    let mut vars = req.bindings.clone();
    for (k, v) in asg {
        vars.insert(k.clone(), v.clone());
    }
    let env = Env::new(&vars, req.state);
    let truth = eval_conjunction(&req.constraints, &env);
    let ok = match req.mode {
        SolveMode::Satisfy => matches!(truth, Ok(true)),
        SolveMode::Violate => matches!(truth, Ok(false)),
    };
    if !ok {
        return false;
    }
    if need_hint {
        if let Some(h) = &req.hints {
            return matches!(eval_bool(h, &env), Ok(true));
        }
    }
    true
}

/// Candidate values for one integer unknown, or None when interval
/// propagation proves the domain empty (SATISFY mode only).
fn int_candidates(req: &SolveRequest, u: &Unknown, rng: &mut ChaCha20Rng) -> Option<Vec<i64>> {
    let mut lo = u.lo as i128;
    let mut hi = u.hi as i128;

    let other_unknown = |e: &Expr| -> bool {
        let mut found = false;
        crate::frontend::ast::visit_idents(e, &mut |n| {
            if n != u.name && req.unknowns.iter().any(|x| x.name == n) {
                found = true;
            }
        });
        found
    };
    let mentions = |e: &Expr| -> bool {
        let mut found = false;
        crate::frontend::ast::visit_idents(e, &mut |n| {
            if n == u.name {
                found = true;
            }
        });
        found
    };

    // SATISFY: narrow [lo, hi] using top-level linear comparisons.
    if req.mode == SolveMode::Satisfy {
        let mut conjuncts = Vec::new();
        for c in &req.constraints {
            flatten_and(c, &mut conjuncts);
        }
        for c in conjuncts {
            if !mentions(c) || other_unknown(c) {
                continue;
            }
            if let ExprKind::Binary { op, lhs, rhs } = &c.kind {
                if op.is_cmp() {
                    if let Some((a, b)) = linear_probe(req, u, lhs, rhs) {
                        match narrow(*op, a, b, lo, hi) {
                            Some((nlo, nhi)) => {
                                lo = nlo;
                                hi = nhi;
                            }
                            None => return None,
                        }
                    }
                }
            }
        }
        if lo > hi {
            return None;
        }
    }

    let clamp = |v: i128| -> Option<i64> {
        if v >= lo && v <= hi {
            Some(v as i64)
        } else {
            None
        }
    };

    let mut cands: BTreeSet<i64> = BTreeSet::new();
    for v in [lo, hi, 0, 1, -1] {
        if let Some(x) = clamp(v) {
            cands.insert(x);
        }
    }

    // Interesting values: comparison boundaries anywhere in the constraints
    // (and in the hints), ±1.
    let mut cmp_sites: Vec<(&Expr, &Expr)> = Vec::new();
    for c in &req.constraints {
        collect_cmps(c, &mut cmp_sites);
    }
    if let Some(h) = &req.hints {
        collect_cmps(h, &mut cmp_sites);
    }
    for (l, r) in cmp_sites {
        let probe_expr = |e: &Expr| mentions(e);
        if !(probe_expr(l) || probe_expr(r)) {
            continue;
        }
        if let Some((a, b)) = linear_probe_pair(req, u, l, r) {
            if a != 0 {
                let v0 = floor_div(-b, a);
                for d in -1..=2i128 {
                    if let Some(x) = clamp(v0 + d) {
                        cands.insert(x);
                    }
                }
            }
        }
    }

    // Existing map keys whenever the unknown keys a lookup: hitting a live
    // key toggles entry existence, which comparison boundaries cannot see.
    let mut keyed: Vec<(&str, usize)> = Vec::new();
    for c in &req.constraints {
        collect_keyed_maps(c, &u.name, &mut keyed);
    }
    if let Some(h) = &req.hints {
        collect_keyed_maps(h, &u.name, &mut keyed);
    }
    for (map, pos) in keyed {
        if let Ok(keys) = req.state.keys(map) {
            for key in keys {
                if let Some(v) = key.get(pos).and_then(Value::as_int) {
                    if let Some(x) = clamp(v as i128) {
                        cands.insert(x);
                    }
                }
            }
        }
    }

    // Full enumeration for small intervals; otherwise seeded samples.
    let width = hi - lo + 1;
    if width <= ENUM_LIMIT as i128 {
        for v in lo..=hi {
            cands.insert(v as i64);
        }
    } else {
        for _ in 0..SAMPLES_PER_UNKNOWN {
            let v = rng.gen_range(lo..=hi);
            cands.insert(v as i64);
        }
    }
    Some(cands.into_iter().collect())
}

fn flatten_and<'e>(e: &'e Expr, out: &mut Vec<&'e Expr>) {
    if let ExprKind::Binary {
        op: BinOp::And,
        lhs,
        rhs,
    } = &e.kind
    {
        flatten_and(lhs, out);
        flatten_and(rhs, out);
    } else {
        out.push(e);
    }
}

fn collect_cmps<'e>(e: &'e Expr, out: &mut Vec<(&'e Expr, &'e Expr)>) {
    match &e.kind {
        ExprKind::Binary { op, lhs, rhs } => {
            if op.is_cmp() {
                out.push((lhs, rhs));
            } else {
                collect_cmps(lhs, out);
                collect_cmps(rhs, out);
            }
        }
        ExprKind::Unary { inner, .. } => collect_cmps(inner, out),
        ExprKind::Quant { body, .. } => collect_cmps(body, out),
        _ => {}
    }
}

/// Find map lookups whose key at some position mentions `unknown`; those
/// maps' live keys become candidate values for it.
fn collect_keyed_maps<'e>(e: &'e Expr, unknown: &str, out: &mut Vec<(&'e str, usize)>) {
    let mentions = |k: &Expr| -> bool {
        let mut hit = false;
        crate::frontend::ast::visit_idents(k, &mut |n| {
            if n == unknown {
                hit = true;
            }
        });
        hit
    };
    match &e.kind {
        ExprKind::MapEntry(r) | ExprKind::Field { entry: r, .. } => {
            for (i, k) in r.keys.iter().enumerate() {
                if mentions(k) {
                    out.push((&r.map, i));
                }
                collect_keyed_maps(k, unknown, out);
            }
        }
        ExprKind::Unary { inner, .. } => collect_keyed_maps(inner, unknown, out),
        ExprKind::Binary { lhs, rhs, .. } => {
            collect_keyed_maps(lhs, unknown, out);
            collect_keyed_maps(rhs, unknown, out);
        }
        ExprKind::Index { base, idx } => {
            collect_keyed_maps(base, unknown, out);
            collect_keyed_maps(idx, unknown, out);
        }
        ExprKind::Slice { base, lo, hi } => {
            collect_keyed_maps(base, unknown, out);
            collect_keyed_maps(lo, unknown, out);
            collect_keyed_maps(hi, unknown, out);
        }
        ExprKind::Quant { body, .. } => collect_keyed_maps(body, unknown, out),
        _ => {}
    }
}

/// Probe whether `lhs - rhs`, viewed as a function of unknown `u`, is affine
/// `a*v + b` with everything else bound. Returns (a, b) on success.
fn linear_probe(req: &SolveRequest, u: &Unknown, lhs: &Expr, rhs: &Expr) -> Option<(i128, i128)> {
    linear_probe_pair(req, u, lhs, rhs)
}

fn linear_probe_pair(
    req: &SolveRequest,
    u: &Unknown,
    lhs: &Expr,
    rhs: &Expr,
) -> Option<(i128, i128)> {
    let f = |v: i64| -> Option<i128> {
        let mut vars = req.bindings.clone();
        vars.insert(u.name.clone(), Value::Int(u.int_kind(), v));
        let env = Env::new(&vars, req.state);
        let a = eval(lhs, &env).ok()?.as_int()?;
        let b = eval(rhs, &env).ok()?.as_int()?;
        Some(a as i128 - b as i128)
    };
    let f0 = f(0)?;
    let f1 = f(1)?;
    let f2 = f(2)?;
    let f17 = f(17)?;
    let a = f1 - f0;
    if f2 - f1 != a || f17 != f0 + 17 * a {
        return None;
    }
    Some((a, f0))
}

fn floor_div(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) != (b < 0)) {
        q - 1
    } else {
        q
    }
}

fn ceil_div(a: i128, b: i128) -> i128 {
    let q = a / b;
    if (a % b != 0) && ((a < 0) == (b < 0)) {
        q + 1
    } else {
        q
    }
}

/// Narrow [lo, hi] by `a*v + b OP 0`. None = empty interval.
fn narrow(op: BinOp, a: i128, b: i128, lo: i128, hi: i128) -> Option<(i128, i128)> {
    if a == 0 {
        // Constant truth; leave the interval alone (conjunction re-eval will
        // reject if it is false).
        return Some((lo, hi));
    }
    // Normalize to a > 0.
    let (a, b, op) = if a < 0 {
        let flipped = match op {
            BinOp::Lt => BinOp::Gt,
            BinOp::Le => BinOp::Ge,
            BinOp::Gt => BinOp::Lt,
            BinOp::Ge => BinOp::Le,
            other => other,
        };
        (-a, -b, flipped)
    } else {
        (a, b, op)
    };
    let (mut lo, mut hi) = (lo, hi);
    match op {
        BinOp::Eq => {
            if (-b) % a != 0 {
                return None;
            }
            let v = -b / a;
            lo = lo.max(v);
            hi = hi.min(v);
        }
        BinOp::Ne => {}
        BinOp::Le => hi = hi.min(floor_div(-b, a)),
        BinOp::Lt => hi = hi.min(ceil_div(-b, a) - 1),
        BinOp::Ge => lo = lo.max(ceil_div(-b, a)),
        BinOp::Gt => lo = lo.max(floor_div(-b, a) + 1),
        _ => {}
    }
    if lo > hi {
        None
    } else {
        Some((lo, hi))
    }
}

/// String candidates: values equated with the unknown in any comparison,
/// plus the empty string and simple mutations (for VIOLATE mode).
fn string_candidates(req: &SolveRequest, u: &Unknown) -> Vec<String> {
    let mut out: BTreeSet<String> = BTreeSet::new();
    out.insert(String::new());
    let mut sites = Vec::new();
    for c in &req.constraints {
        collect_cmps(c, &mut sites);
    }
    for (l, r) in sites {
        for (a, b) in [(l, r), (r, l)] {
            if matches!(&a.kind, ExprKind::Ident(n) if *n == u.name) {
                let env = Env::new(&req.bindings, req.state);
                if let Ok(Value::Str(s)) = eval(b, &env) {
                    out.insert(format!("{s}!"));
                    out.insert(s);
                }
            }
        }
    }
    out.into_iter().collect()
}

/// Structural solutions for array unknowns given a fixed scalar assignment.
/// Returns one or more full array assignments to try: the structurally
/// correct one first, plus byte-tampered and truncated variants in VIOLATE
/// mode.
fn array_variants(
    req: &SolveRequest,
    arrs: &[&Unknown],
    scalars: &Assignment,
    rng: &mut ChaCha20Rng,
) -> Vec<Vec<(String, Value)>> {
    if arrs.is_empty() {
        return vec![Vec::new()];
    }
    let mut vars = req.bindings.clone();
    for (k, v) in scalars {
        vars.insert(k.clone(), v.clone());
    }

    // Per-unknown: structural solution.
    let mut per_unknown: Vec<(String, ArrElem, Vec<i64>)> = Vec::new();
    for u in arrs {
        let elem = match &u.ty {
            GkType::Array(e) => *e,
            _ => ArrElem::Void,
        };
        let data = structural_array(req, u, &vars);
        per_unknown.push((u.name.clone(), elem, data));
    }

    let correct: Vec<(String, Value)> = per_unknown
        .iter()
        .map(|(n, e, d)| (n.clone(), Value::Arr(*e, d.clone())))
        .collect();

    if req.mode == SolveMode::Satisfy {
        return vec![correct];
    }

    // VIOLATE: also try tampering with the first array unknown.
    let mut variants = vec![correct.clone()];
    if let Some((n, e, d)) = per_unknown.first() {
        let mut tampered = d.clone();
        if tampered.is_empty() {
            tampered.push(1);
        } else {
            let pos = rng.gen_range(0..tampered.len());
            let mask = e.bits().min(8);
            tampered[pos] ^= (1i64 << (mask - 1)) | 1;
        }
        let mut v = correct.clone();
        for slot in &mut v {
            if slot.0 == *n {
                slot.1 = Value::Arr(*e, tampered.clone());
            }
        }
        variants.push(v);
        // Truncated variant.
        if !d.is_empty() {
            let mut v2 = correct.clone();
            for slot in &mut v2 {
                if slot.0 == *n {
                    slot.1 = Value::Arr(*e, d[..d.len() - 1].to_vec());
                }
            }
            variants.push(v2);
        }
    }
    variants
}

/// Build an array for unknown `u` by copying every slice/index equality that
/// constrains it; positions never constrained stay zero.
fn structural_array(req: &SolveRequest, u: &Unknown, vars: &BTreeMap<String, Value>) -> Vec<i64> {
    let env = Env::new(vars, req.state);
    let mut data: Vec<i64> = Vec::new();
    let mut conjuncts = Vec::new();
    for c in &req.constraints {
        collect_equalities(c, &env, &mut conjuncts);
    }
    for (l, r) in conjuncts {
        for (side, other) in [(&l, &r), (&r, &l)] {
            match &side.kind {
                ExprKind::Ident(n) if *n == u.name => {
                    if let Ok(v) = eval(other, &env) {
                        if let Value::Arr(_, xs) = v {
                            copy_into(&mut data, 0, &xs);
                        } else if let Value::Str(s) = v {
                            let xs: Vec<i64> = s.bytes().map(|b| b as i64).collect();
                            copy_into(&mut data, 0, &xs);
                        }
                    }
                }
                ExprKind::Slice { base, lo, hi } => {
                    if matches!(&base.kind, ExprKind::Ident(n) if *n == u.name) {
                        let (lo_v, hi_v) = match (eval(lo, &env), eval(hi, &env)) {
                            (Ok(a), Ok(b)) => match (a.as_int(), b.as_int()) {
                                (Some(a), Some(b)) => (a, b),
                                _ => continue,
                            },
                            _ => continue,
                        };
                        if lo_v < 0 || hi_v < lo_v || hi_v - lo_v > MAX_ARRAY_LEN {
                            continue;
                        }
                        if let Ok(v) = eval(other, &env) {
                            let xs = match v {
                                Value::Arr(_, xs) => xs,
                                Value::Str(s) => s.bytes().map(|b| b as i64).collect(),
                                _ => continue,
                            };
                            let want = (hi_v - lo_v) as usize;
                            let mut seg = xs;
                            seg.resize(want, 0);
                            copy_into(&mut data, lo_v as usize, &seg);
                        }
                    }
                }
                ExprKind::Index { base, idx } => {
                    if matches!(&base.kind, ExprKind::Ident(n) if *n == u.name) {
                        if let (Ok(i), Ok(v)) = (eval(idx, &env), eval(other, &env)) {
                            if let (Some(i), Some(x)) = (i.as_int(), v.as_int()) {
                                if i >= 0 && i <= MAX_ARRAY_LEN {
                                    copy_into(&mut data, i as usize, &[x]);
                                }
                            }
                        }
                    }
                }
                _ => {}
            }
        }
    }
    data
}

fn copy_into(data: &mut Vec<i64>, at: usize, src: &[i64]) {
    if at + src.len() > data.len() {
        data.resize(at + src.len(), 0);
    }
    data[at..at + src.len()].copy_from_slice(src);
}

/// Equality sites reachable under concretely-true guards: plain conjuncts,
/// plus consequents of implications whose antecedent evaluates true.
fn collect_equalities<'e>(e: &'e Expr, env: &Env, out: &mut Vec<(&'e Expr, &'e Expr)>) {
    match &e.kind {
        ExprKind::Binary { op, lhs, rhs } => match op {
            BinOp::Eq => out.push((lhs, rhs)),
            BinOp::And => {
                collect_equalities(lhs, env, out);
                collect_equalities(rhs, env, out);
            }
            BinOp::Implies => {
                // Follow the consequent unless the guard is concretely false.
                if !matches!(eval_bool(lhs, env), Ok(false)) {
                    collect_equalities(rhs, env, out);
                }
            }
            _ => {}
        },
        _ => {}
    }
}
