//! Scoped-constraint collection: the `requires` clauses of an action with
//! branch guards conjoined as implications and locals inlined by
//! substitution, so they can be solved for unknown outputs.

use std::collections::BTreeMap;

use crate::frontend::ast::{
    ActionDecl, BinOp, Expr, ExprKind, GkType, Stmt, UnOp,
};
use crate::frontend::pretty::expr_source;

/// One `requires` clause in scope, guarded by its path condition.
#[derive(Debug, Clone)]
pub struct ScopedConstraint {
    /// `guard1 -> (guard2 -> ... -> cond)` with locals substituted away.
    pub expr: Expr,
    /// True for `await requires` clauses.
    pub is_await: bool,
    /// Source text of the original (unguarded) condition, for reporting.
    pub src: String,
}

/// Collect every `requires` in the action body, wrapping each in the branch
/// conditions that guard it. `extra_path` is conjoined in front of all of
/// them. Locals are substituted by their defining expressions so the result
/// only references params, extern-call outputs, and map state. Statements
/// after a `return` on the same path are unreachable and skipped.
pub fn collect_scoped_constraints(action: &ActionDecl, extra_path: &[Expr]) -> Vec<ScopedConstraint> {
    let mut out = Vec::new();
    let mut subst: BTreeMap<String, Expr> = BTreeMap::new();
    let path: Vec<Expr> = extra_path.to_vec();
    walk(&action.body, &path, &mut subst, &mut out);
    out
}

fn apply_subst(e: &Expr, subst: &BTreeMap<String, Expr>) -> Expr {
    let mut cur = e.clone();
    // Entries are fully expanded at insertion time, so one pass suffices.
    for (name, val) in subst {
        cur = crate::frontend::ast::substitute(&cur, name, val);
    }
    cur
}

fn not_expr(e: &Expr) -> Expr {
    Expr {
        kind: ExprKind::Unary {
            op: UnOp::Not,
            inner: Box::new(e.clone()),
        },
        span: e.span,
        ty: Some(GkType::Bool),
    }
}

fn implies(guards: &[Expr], cond: Expr) -> Expr {
    let mut cur = cond;
    for g in guards.iter().rev() {
        cur = Expr {
            kind: ExprKind::Binary {
                op: BinOp::Implies,
                lhs: Box::new(g.clone()),
                rhs: Box::new(cur),
            },
            span: g.span,
            ty: Some(GkType::Bool),
        };
    }
    cur
}

/// Returns true when the block falls through (no unconditional return).
fn walk(
    stmts: &[Stmt],
    path: &[Expr],
    subst: &mut BTreeMap<String, Expr>,
    out: &mut Vec<ScopedConstraint>,
) -> bool {
    for s in stmts {
        match s {
            Stmt::Local { name, value, .. } => {
                let v = apply_subst(value, subst);
                subst.insert(name.clone(), v);
            }
            Stmt::Assign { target, value, .. } => {
                if let crate::frontend::ast::LValue::Var(name) = target {
                    let v = apply_subst(value, subst);
                    subst.insert(name.clone(), v);
                }
                // Map-field writes happen at execution time; constraints
                // never reference an entry both before and after a write in
                // the bundled models.
            }
            Stmt::Requires { cond, awaited, .. } => {
                let c = apply_subst(cond, subst);
                out.push(ScopedConstraint {
                    src: expr_source(cond),
                    expr: implies(path, c),
                    is_await: *awaited,
                });
            }
            Stmt::Atomic { body, .. } => {
                if !walk(body, path, subst, out) {
                    return false;
                }
            }
            Stmt::Extern { bind, .. } => {
                // The bound output is an unknown from here on; drop any
                // shadowed substitution.
                if let Some(b) = bind {
                    subst.remove(&b.name);
                }
            }
            Stmt::If { cond, then, els, .. } => {
                let c = apply_subst(cond, subst);
                let mut then_path = path.to_vec();
                then_path.push(c.clone());
                let mut then_subst = subst.clone();
                let t_falls = walk(then, &then_path, &mut then_subst, out);
                let mut else_path = path.to_vec();
                else_path.push(not_expr(&c));
                let mut else_subst = subst.clone();
                let e_falls = walk(els, &else_path, &mut else_subst, out);
                if !t_falls && !e_falls {
                    return false;
                }
                // Keep substitutions only when both branches agree (they
                // rarely diverge in practice); drop diverging entries.
                if t_falls && e_falls {
                    subst.retain(|k, v| then_subst.get(k) == Some(v) && else_subst.get(k) == Some(v));
                } else if t_falls {
                    *subst = then_subst;
                } else {
                    *subst = else_subst;
                }
            }
            Stmt::Return { .. } => return false,
            Stmt::Delete { .. } => {}
        }
    }
    true
}
