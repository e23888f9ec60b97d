use std::fmt::Write;

use super::ast::*;

/// Canonical pretty-print. The output re-parses to a structurally identical
/// AST (modulo spans and type annotations).
pub fn pretty_print(prog: &ModelProgram) -> String {
    let mut out = String::new();
    for m in &prog.maps {
        let _ = writeln!(
            out,
            "Map {}({}) returns ({});",
            m.name,
            params(&m.keys),
            params(&m.fields)
        );
    }
    for a in &prog.actions {
        if !out.is_empty() {
            out.push('\n');
        }
        let _ = writeln!(
            out,
            "action {}({}) returns ({}) := {{",
            a.name,
            params(&a.params),
            params(&a.returns)
        );
        for s in &a.body {
            stmt(&mut out, s, 1);
        }
        if let Some(h) = &a.fuzz_hint {
            let _ = writeln!(out, "  fuzz {{ requires ({}); }}", expr(h, 0));
        }
        out.push_str("}\n");
    }
    if !prog.init.is_empty() {
        if !out.is_empty() {
            out.push('\n');
        }
        out.push_str("init {\n");
        for ia in &prog.init {
            let _ = writeln!(out, "  {} := {};", lvalue(&ia.target), expr(&ia.value, 0));
        }
        out.push_str("}\n");
    }
    out
}

fn params(ps: &[Param]) -> String {
    ps.iter()
        .map(|p| format!("{}: {}", p.name, ty(&p.ty)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn ty(t: &GkType) -> String {
    t.display()
}

fn indent(out: &mut String, depth: usize) {
    for _ in 0..depth {
        out.push_str("  ");
    }
}

fn stmt(out: &mut String, s: &Stmt, depth: usize) {
    indent(out, depth);
    match s {
        Stmt::Local { name, ty: t, value, .. } => {
            let _ = writeln!(out, "{}: {} := {};", name, ty(t), expr(value, 0));
        }
        Stmt::Assign { target, value, .. } => {
            let _ = writeln!(out, "{} := {};", lvalue(target), expr(value, 0));
        }
        Stmt::Requires { cond, awaited, .. } => {
            let kw = if *awaited { "await requires" } else { "requires" };
            let _ = writeln!(out, "{kw} ({});", expr(cond, 0));
        }
        Stmt::Atomic { entry, body, .. } => {
            let _ = writeln!(out, "atomic ({}) {{", map_ref(entry));
            for b in body {
                stmt(out, b, depth + 1);
            }
            indent(out, depth);
            out.push_str("}\n");
        }
        Stmt::Extern { bind, func, args, .. } => {
            let call = format!(
                "extern call {}({})",
                func,
                args.iter().map(|a| expr(a, 0)).collect::<Vec<_>>().join(", ")
            );
            match bind {
                Some(ExternBind {
                    name,
                    declared_ty: Some(t),
                }) => {
                    let _ = writeln!(out, "{}: {} := {call};", name, ty(t));
                }
                Some(ExternBind {
                    name,
                    declared_ty: None,
                }) => {
                    let _ = writeln!(out, "{name} := {call};");
                }
                None => {
                    let _ = writeln!(out, "{call};");
                }
            }
        }
        Stmt::If { cond, then, els, .. } => {
            let _ = writeln!(out, "if ({}) {{", expr(cond, 0));
            for b in then {
                stmt(out, b, depth + 1);
            }
            indent(out, depth);
            if els.is_empty() {
                out.push_str("}\n");
            } else {
                out.push_str("} else {\n");
                for b in els {
                    stmt(out, b, depth + 1);
                }
                indent(out, depth);
                out.push_str("}\n");
            }
        }
        Stmt::Return { value, .. } => match value {
            Some(v) => {
                let _ = writeln!(out, "return {};", expr(v, 0));
            }
            None => out.push_str("return;\n"),
        },
        Stmt::Delete { entry, .. } => {
            let _ = writeln!(out, "delete {};", map_ref(entry));
        }
    }
}

fn lvalue(lv: &LValue) -> String {
    match lv {
        LValue::Var(n) => n.clone(),
        LValue::MapField { entry, field } => format!("{}.{}", map_ref(entry), field),
        LValue::Index { base, idx } => format!("{}[{}]", lvalue(base), expr(idx, 0)),
        LValue::Slice { base, lo, hi } => {
            format!("{}[{}:{}]", lvalue(base), expr(lo, 0), expr(hi, 0))
        }
    }
}

fn map_ref(r: &MapRef) -> String {
    format!(
        "{}({})",
        r.map,
        r.keys.iter().map(|k| expr(k, 0)).collect::<Vec<_>>().join(", ")
    )
}

// Precedence levels, loosest to tightest.
const LVL_QUANT: u8 = 0;
const LVL_IMPLIES: u8 = 1;
const LVL_OR: u8 = 2;
const LVL_AND: u8 = 3;
const LVL_NOT: u8 = 4;
const LVL_CMP: u8 = 5;
const LVL_ADD: u8 = 6;
const LVL_MUL: u8 = 7;
const LVL_UNARY: u8 = 8;
const LVL_ATOM: u8 = 9;

fn op_level(op: BinOp) -> u8 {
    match op {
        BinOp::Implies => LVL_IMPLIES,
        BinOp::Or => LVL_OR,
        BinOp::And => LVL_AND,
        BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge => LVL_CMP,
        BinOp::Add | BinOp::Sub => LVL_ADD,
        BinOp::Mul | BinOp::Div | BinOp::Mod => LVL_MUL,
    }
}

/// Print `e`; wrap in parens when its level is looser than `min_level`.
pub fn expr(e: &Expr, min_level: u8) -> String {
    let (text, level) = match &e.kind {
        ExprKind::IntLit(v) => (v.to_string(), LVL_ATOM),
        ExprKind::StrLit(s) => (
            format!(
                "\"{}\"",
                s.chars()
                    .flat_map(|c| c.escape_default())
                    .collect::<String>()
            ),
            LVL_ATOM,
        ),
        ExprKind::CharLit(c) => (
            format!("'{}'", (*c as char).escape_default()),
            LVL_ATOM,
        ),
        ExprKind::BoolLit(b) => (b.to_string(), LVL_ATOM),
        ExprKind::Null => ("NULL".to_string(), LVL_ATOM),
        ExprKind::Ident(n) => (n.clone(), LVL_ATOM),
        ExprKind::MapEntry(r) => (map_ref(r), LVL_ATOM),
        ExprKind::Field { entry, field } => (format!("{}.{}", map_ref(entry), field), LVL_ATOM),
        ExprKind::Unary { op: UnOp::Neg, inner } => {
            (format!("-{}", expr(inner, LVL_UNARY)), LVL_UNARY)
        }
        ExprKind::Unary { op: UnOp::Not, inner } => {
            (format!("not {}", expr(inner, LVL_NOT)), LVL_NOT)
        }
        ExprKind::Binary { op, lhs, rhs } => {
            let lvl = op_level(*op);
            let (lmin, rmin) = match op {
                // right-associative
                BinOp::Implies => (lvl + 1, lvl),
                // non-associative comparisons
                op if op.is_cmp() => (lvl + 1, lvl + 1),
                // left-associative
                _ => (lvl, lvl + 1),
            };
            (
                format!(
                    "{} {} {}",
                    expr(lhs, lmin),
                    op.symbol(),
                    expr(rhs, rmin)
                ),
                lvl,
            )
        }
        ExprKind::Index { base, idx } => (
            format!("{}[{}]", expr(base, LVL_ATOM), expr(idx, 0)),
            LVL_ATOM,
        ),
        ExprKind::Slice { base, lo, hi } => (
            format!(
                "{}[{}:{}]",
                expr(base, LVL_ATOM),
                expr(lo, 0),
                expr(hi, 0)
            ),
            LVL_ATOM,
        ),
        ExprKind::Quant { q, var, map, body } => {
            let kw = match q {
                Quantifier::Forall => "forall",
                Quantifier::Exists => "exists",
            };
            (
                format!("{kw} {var} in {map} :: {}", expr(body, LVL_QUANT)),
                LVL_QUANT,
            )
        }
    };
    if level < min_level {
        format!("({text})")
    } else {
        text
    }
}

/// Render a constraint expression as GKSpec source text (used in traces).
pub fn expr_source(e: &Expr) -> String {
    expr(e, 0)
}
