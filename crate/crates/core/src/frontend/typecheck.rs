use std::collections::{BTreeMap, HashMap};

use super::ast::*;
use super::consts::builtin_const;
use super::diag::{DiagKind, Diagnostic};
use super::token::Span;

/// Signature of a trusted runtime-library function callable via
/// `extern call`. Anything named `untrusted_*` is the service call instead.
pub fn trusted_extern_sig(name: &str) -> Option<(Vec<GkType>, GkType)> {
    match name {
        "canonicalize" => Some((vec![GkType::Str, GkType::Str], GkType::Str)),
        _ => None,
    }
}

pub fn is_untrusted_fn(name: &str) -> bool {
    name.starts_with("untrusted_")
}

/// Per-action facts computed by the type checker.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ActionMeta {
    /// The single untrusted extern function the action may invoke.
    pub untrusted_fn: Option<String>,
    /// Variable bound by the untrusted call, if any.
    pub untrusted_bind: Option<String>,
    /// Array-typed arguments of the untrusted call that the service writes
    /// into (they appear in a `requires` after the call).
    pub out_arrays: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypedModelProgram {
    pub program: ModelProgram,
    pub meta: BTreeMap<String, ActionMeta>,
}

impl TypedModelProgram {
    pub fn action_meta(&self, name: &str) -> &ActionMeta {
        &self.meta[name]
    }
}

pub fn typecheck(program: &ModelProgram) -> Result<TypedModelProgram, Diagnostic> {
    let mut program = program.clone();
    let maps: HashMap<String, MapDecl> =
        program.maps.iter().map(|m| (m.name.clone(), m.clone())).collect();
    let mut meta = BTreeMap::new();

    let actions = std::mem::take(&mut program.actions);
    let mut typed_actions = Vec::with_capacity(actions.len());
    for mut action in actions {
        let m = check_action(&maps, &mut action)?;
        meta.insert(action.name.clone(), m);
        typed_actions.push(action);
    }
    program.actions = typed_actions;

    let init = std::mem::take(&mut program.init);
    let mut typed_init = Vec::with_capacity(init.len());
    for mut ia in init {
        check_init(&maps, &mut ia)?;
        typed_init.push(ia);
    }
    program.init = typed_init;

    Ok(TypedModelProgram { program, meta })
}

fn err(kind: DiagKind, span: Span, msg: impl Into<String>) -> Diagnostic {
    Diagnostic::new(kind, span, msg)
}

/// Best-effort constant folding for literals and builtin constants.
pub fn const_fold(e: &Expr) -> Option<i128> {
    match &e.kind {
        ExprKind::IntLit(v) => Some(*v),
        ExprKind::CharLit(c) => Some(*c as i128),
        ExprKind::Ident(n) => builtin_const(n).map(|v| v as i128),
        ExprKind::Unary { op: UnOp::Neg, inner } => const_fold(inner).map(|v| -v),
        ExprKind::Binary { op, lhs, rhs } => {
            let a = const_fold(lhs)?;
            let b = const_fold(rhs)?;
            match op {
                BinOp::Add => a.checked_add(b),
                BinOp::Sub => a.checked_sub(b),
                BinOp::Mul => a.checked_mul(b),
                BinOp::Div if b != 0 => Some(a / b),
                BinOp::Mod if b != 0 => Some(a % b),
                _ => None,
            }
        }
        _ => None,
    }
}

struct Ctx<'a> {
    maps: &'a HashMap<String, MapDecl>,
    scope: HashMap<String, GkType>,
    /// Untrusted extern found in the pre-pass (function, bound variable).
    untrusted: Option<(String, Option<String>)>,
    seen_untrusted: bool,
    atomic_stack: Vec<String>,
    /// `requires` expressions lexically after the untrusted call.
    post_requires: Vec<Expr>,
    action_ret: GkType,
}

fn check_action(maps: &HashMap<String, MapDecl>, action: &mut ActionDecl) -> Result<ActionMeta, Diagnostic> {
    // Pre-pass: locate the untrusted call and reject a second one.
    let mut untrusted: Option<(String, Option<String>)> = None;
    find_untrusted(&action.body, &mut untrusted, action.span)?;

    let mut scope = HashMap::new();
    for p in action.params.iter().chain(action.returns.iter()) {
        if scope.insert(p.name.clone(), p.ty.clone()).is_some() {
            return Err(err(
                DiagKind::DuplicateName,
                action.span,
                format!("parameter `{}` declared more than once", p.name),
            ));
        }
    }

    let mut ctx = Ctx {
        maps,
        scope,
        untrusted: untrusted.clone(),
        seen_untrusted: false,
        atomic_stack: Vec::new(),
        post_requires: Vec::new(),
        action_ret: action.return_type(),
    };

    check_stmts(&mut ctx, &mut action.body)?;

    if let Some(hint) = &mut action.fuzz_hint {
        ctx.seen_untrusted = true;
        let t = type_expr(&mut ctx, hint)?;
        expect_bool(&t, hint.span)?;
    }

    // Out arrays: array args of the untrusted call referenced by a
    // post-call requires.
    let mut out_arrays = Vec::new();
    if untrusted.is_some() {
        if let Some(ext) = find_extern_stmt(&action.body, untrusted.as_ref().unwrap()) {
            for arg in ext.1 {
                if let ExprKind::Ident(n) = &arg.kind {
                    let is_array = matches!(ctx.scope.get(n), Some(GkType::Array(_)));
                    if is_array && !out_arrays.contains(n) {
                        let referenced = ctx.post_requires.iter().any(|r| {
                            let mut found = false;
                            visit_idents(r, &mut |id| {
                                if id == n {
                                    found = true;
                                }
                            });
                            found
                        });
                        if referenced {
                            out_arrays.push(n.clone());
                        }
                    }
                }
            }
        }
    }

    Ok(ActionMeta {
        untrusted_fn: untrusted.as_ref().map(|(f, _)| f.clone()),
        untrusted_bind: untrusted.and_then(|(_, b)| b),
        out_arrays,
    })
}

fn find_untrusted(
    body: &[Stmt],
    found: &mut Option<(String, Option<String>)>,
    action_span: Span,
) -> Result<(), Diagnostic> {
    for s in body {
        match s {
            Stmt::Extern { bind, func, span, .. } if is_untrusted_fn(func) => {
                if found.is_some() {
                    return Err(err(
                        DiagKind::DesignError,
                        *span,
                        "an action may invoke at most one untrusted call",
                    ));
                }
                *found = Some((func.clone(), bind.as_ref().map(|b| b.name.clone())));
            }
            Stmt::If { then, els, .. } => {
                find_untrusted(then, found, action_span)?;
                find_untrusted(els, found, action_span)?;
            }
            Stmt::Atomic { body, .. } => find_untrusted(body, found, action_span)?,
            _ => {}
        }
    }
    Ok(())
}

fn find_extern_stmt<'a>(
    body: &'a [Stmt],
    target: &(String, Option<String>),
) -> Option<(&'a str, &'a [Expr])> {
    for s in body {
        match s {
            Stmt::Extern { func, args, .. } if *func == target.0 => {
                return Some((func, args));
            }
            Stmt::If { then, els, .. } => {
                if let Some(r) = find_extern_stmt(then, target) {
                    return Some(r);
                }
                if let Some(r) = find_extern_stmt(els, target) {
                    return Some(r);
                }
            }
            Stmt::Atomic { body, .. } => {
                if let Some(r) = find_extern_stmt(body, target) {
                    return Some(r);
                }
            }
            _ => {}
        }
    }
    None
}

fn check_stmts(ctx: &mut Ctx, body: &mut [Stmt]) -> Result<(), Diagnostic> {
    let mut wrote_state_in_atomic = false;
    for s in body.iter_mut() {
        check_stmt(ctx, s, &mut wrote_state_in_atomic)?;
    }
    Ok(())
}

fn check_stmt(ctx: &mut Ctx, s: &mut Stmt, wrote_state: &mut bool) -> Result<(), Diagnostic> {
    match s {
        Stmt::Local { name, ty, value, span } => {
            let vt = type_expr(ctx, value)?;
            ensure_assignable(&vt, ty, Some(value), *span)?;
            if ctx.scope.insert(name.clone(), ty.clone()).is_some() {
                return Err(err(
                    DiagKind::DuplicateName,
                    *span,
                    format!("`{name}` is already declared"),
                ));
            }
        }
        Stmt::Assign { target, value, span } => {
            let tt = type_lvalue(ctx, target)?;
            let vt = type_expr(ctx, value)?;
            ensure_assignable(&vt, &tt, Some(value), *span)?;
            if !ctx.atomic_stack.is_empty() && writes_state_lv(target) {
                *wrote_state = true;
            }
        }
        Stmt::Requires { cond, awaited, span } => {
            if *awaited {
                if ctx.atomic_stack.is_empty() {
                    return Err(err(
                        DiagKind::DesignError,
                        *span,
                        "`await requires` is only allowed inside an atomic block",
                    ));
                }
                if *wrote_state {
                    return Err(err(
                        DiagKind::DesignError,
                        *span,
                        "`await requires` must precede state writes in its atomic block",
                    ));
                }
            }
            // Placement: an output bound by the untrusted call may not be
            // referenced by a requires that executes before the call.
            if !ctx.seen_untrusted {
                if let Some((_, Some(bind))) = &ctx.untrusted {
                    let mut illegal = false;
                    visit_idents(cond, &mut |id| {
                        if id == bind {
                            illegal = true;
                        }
                    });
                    if illegal {
                        return Err(err(
                            DiagKind::IllegalRequiresPlacement,
                            *span,
                            format!(
                                "`{bind}` is bound by the untrusted call and cannot \
                                 appear in a requires before it"
                            ),
                        ));
                    }
                }
            }
            let t = type_expr(ctx, cond)?;
            expect_bool(&t, *span)?;
            if ctx.seen_untrusted {
                ctx.post_requires.push(cond.clone());
            }
        }
        Stmt::Atomic { entry, body, span } => {
            check_map_ref(ctx, entry)?;
            if ctx.atomic_stack.contains(&entry.map) {
                return Err(err(
                    DiagKind::DesignError,
                    *span,
                    format!("re-entrant atomic block on map `{}`", entry.map),
                ));
            }
            ctx.atomic_stack.push(entry.map.clone());
            let r = check_stmts(ctx, body);
            ctx.atomic_stack.pop();
            r?;
        }
        Stmt::Extern { bind, func, args, span } => {
            if is_untrusted_fn(func) {
                for a in args.iter_mut() {
                    type_expr(ctx, a)?;
                }
                if let Some(b) = bind {
                    match (&b.declared_ty, ctx.scope.get(&b.name)) {
                        (Some(ty), None) => {
                            ctx.scope.insert(b.name.clone(), ty.clone());
                        }
                        (Some(_), Some(_)) => {
                            return Err(err(
                                DiagKind::DuplicateName,
                                *span,
                                format!("`{}` is already declared", b.name),
                            ));
                        }
                        (None, Some(_)) => {}
                        (None, None) => {
                            return Err(err(
                                DiagKind::UnknownIdentifier,
                                *span,
                                format!("`{}` is not declared", b.name),
                            ));
                        }
                    }
                }
                ctx.seen_untrusted = true;
            } else {
                let Some((sig_args, sig_ret)) = trusted_extern_sig(func) else {
                    return Err(err(
                        DiagKind::UnknownIdentifier,
                        *span,
                        format!(
                            "`{func}` is neither an untrusted call (untrusted_*) nor a \
                             trusted library function"
                        ),
                    ));
                };
                if args.len() != sig_args.len() {
                    return Err(err(
                        DiagKind::ArityMismatch,
                        *span,
                        format!(
                            "`{func}` takes {} arguments, got {}",
                            sig_args.len(),
                            args.len()
                        ),
                    ));
                }
                for (a, expect) in args.iter_mut().zip(&sig_args) {
                    let t = type_expr(ctx, a)?;
                    ensure_assignable(&t, expect, Some(a), *span)?;
                }
                if let Some(b) = bind {
                    match (&b.declared_ty, ctx.scope.get(&b.name).cloned()) {
                        (Some(ty), None) => {
                            ensure_assignable(&sig_ret, ty, None, *span)?;
                            ctx.scope.insert(b.name.clone(), ty.clone());
                        }
                        (None, Some(ty)) => ensure_assignable(&sig_ret, &ty, None, *span)?,
                        (Some(_), Some(_)) => {
                            return Err(err(
                                DiagKind::DuplicateName,
                                *span,
                                format!("`{}` is already declared", b.name),
                            ));
                        }
                        (None, None) => {
                            return Err(err(
                                DiagKind::UnknownIdentifier,
                                *span,
                                format!("`{}` is not declared", b.name),
                            ));
                        }
                    }
                }
            }
        }
        Stmt::If { cond, then, els, span } => {
            let t = type_expr(ctx, cond)?;
            expect_bool(&t, *span)?;
            check_stmts(ctx, then)?;
            check_stmts(ctx, els)?;
        }
        Stmt::Return { value, span } => match (value, &ctx.action_ret) {
            (None, GkType::Void) => {}
            (None, other) => {
                return Err(err(
                    DiagKind::TypeMismatch,
                    *span,
                    format!("action returns {}, got bare return", other.display()),
                ));
            }
            (Some(v), ret) => {
                let ret = ret.clone();
                let t = type_expr(ctx, v)?;
                if ret != GkType::Void {
                    ensure_assignable(&t, &ret, Some(v), *span)?;
                }
            }
        },
        Stmt::Delete { entry, .. } => {
            check_map_ref(ctx, entry)?;
            if !ctx.atomic_stack.is_empty() {
                *wrote_state = true;
            }
        }
    }
    Ok(())
}

fn writes_state_lv(lv: &LValue) -> bool {
    match lv {
        LValue::Var(_) => false,
        LValue::MapField { .. } => true,
        LValue::Index { base, .. } | LValue::Slice { base, .. } => writes_state_lv(base),
    }
}

fn check_map_ref(ctx: &mut Ctx, r: &mut MapRef) -> Result<(), Diagnostic> {
    let span = r.keys.first().map(|k| k.span).unwrap_or_default();
    let decl = ctx
        .maps
        .get(&r.map)
        .cloned()
        .ok_or_else(|| err(DiagKind::UnknownIdentifier, span, format!("unknown map `{}`", r.map)))?;
    if r.keys.len() != decl.keys.len() {
        return Err(err(
            DiagKind::ArityMismatch,
            span,
            format!(
                "map `{}` has {} key(s), got {}",
                r.map,
                decl.keys.len(),
                r.keys.len()
            ),
        ));
    }
    for (k, kd) in r.keys.iter_mut().zip(&decl.keys) {
        let t = type_expr(ctx, k)?;
        ensure_assignable(&t, &kd.ty, Some(k), k.span)?;
    }
    Ok(())
}

fn type_lvalue(ctx: &mut Ctx, lv: &mut LValue) -> Result<GkType, Diagnostic> {
    match lv {
        LValue::Var(n) => ctx.scope.get(n).cloned().ok_or_else(|| {
            err(
                DiagKind::UnknownIdentifier,
                Span::default(),
                format!("`{n}` is not declared"),
            )
        }),
        LValue::MapField { entry, field } => {
            check_map_ref(ctx, entry)?;
            let decl = &ctx.maps[&entry.map];
            decl.fields
                .iter()
                .find(|f| f.name == *field)
                .map(|f| f.ty.clone())
                .ok_or_else(|| {
                    err(
                        DiagKind::UnknownIdentifier,
                        Span::default(),
                        format!("map `{}` has no field `{field}`", entry.map),
                    )
                })
        }
        LValue::Index { base, idx } => {
            let bt = type_lvalue(ctx, base)?;
            let it = type_expr(ctx, idx)?;
            expect_int(&it, idx.span)?;
            match bt {
                GkType::Array(e) => Ok(GkType::Int(elem_int_kind(e))),
                other => Err(err(
                    DiagKind::TypeMismatch,
                    idx.span,
                    format!("cannot index into {}", other.display()),
                )),
            }
        }
        LValue::Slice { base, lo, hi } => {
            let bt = type_lvalue(ctx, base)?;
            let lt = type_expr(ctx, lo)?;
            expect_int(&lt, lo.span)?;
            let ht = type_expr(ctx, hi)?;
            expect_int(&ht, hi.span)?;
            match bt {
                GkType::Array(_) => Ok(bt),
                other => Err(err(
                    DiagKind::TypeMismatch,
                    lo.span,
                    format!("cannot slice {}", other.display()),
                )),
            }
        }
    }
}

pub fn elem_int_kind(e: ArrElem) -> IntKind {
    match e {
        ArrElem::Void => IntKind::Char,
        ArrElem::Int(k) => k,
    }
}

fn expect_bool(t: &GkType, span: Span) -> Result<(), Diagnostic> {
    if *t == GkType::Bool {
        Ok(())
    } else {
        Err(err(
            DiagKind::TypeMismatch,
            span,
            format!("expected a boolean condition, got {}", t.display()),
        ))
    }
}

fn expect_int(t: &GkType, span: Span) -> Result<IntKind, Diagnostic> {
    match t {
        GkType::Int(k) => Ok(*k),
        other => Err(err(
            DiagKind::TypeMismatch,
            span,
            format!("expected an integer, got {}", other.display()),
        )),
    }
}

fn promote(a: IntKind, b: IntKind) -> IntKind {
    if a == b {
        a
    } else if a.widens_to(b) {
        b
    } else if b.widens_to(a) {
        a
    } else {
        IntKind::SsizeT
    }
}

fn ensure_assignable(
    src: &GkType,
    tgt: &GkType,
    src_expr: Option<&Expr>,
    span: Span,
) -> Result<(), Diagnostic> {
    let ok = match (src, tgt) {
        (a, b) if a == b => true,
        (GkType::Int(a), GkType::Int(b)) => {
            a.widens_to(*b)
                || src_expr
                    .and_then(const_fold)
                    .map(|v| b.contains(v))
                    .unwrap_or(false)
        }
        (GkType::Array(a), GkType::Array(b)) => a.compatible(*b),
        // A string literal is a valid char[] initializer.
        (GkType::Str, GkType::Array(e)) if e.bits() == 8 => {
            matches!(src_expr.map(|e| &e.kind), Some(ExprKind::StrLit(_)))
        }
        _ => false,
    };
    if ok {
        Ok(())
    } else {
        Err(err(
            DiagKind::TypeMismatch,
            span,
            format!("cannot assign {} to {}", src.display(), tgt.display()),
        ))
    }
}

fn type_expr(ctx: &mut Ctx, e: &mut Expr) -> Result<GkType, Diagnostic> {
    let t = type_expr_inner(ctx, e)?;
    e.ty = Some(t.clone());
    Ok(t)
}

fn type_expr_inner(ctx: &mut Ctx, e: &mut Expr) -> Result<GkType, Diagnostic> {
    let span = e.span;
    match &mut e.kind {
        ExprKind::IntLit(v) => {
            let k = if IntKind::Int.contains(*v) {
                IntKind::Int
            } else if IntKind::OffT.contains(*v) {
                IntKind::OffT
            } else {
                return Err(err(
                    DiagKind::TypeMismatch,
                    span,
                    "integer literal out of 64-bit range",
                ));
            };
            Ok(GkType::Int(k))
        }
        ExprKind::StrLit(_) => Ok(GkType::Str),
        ExprKind::CharLit(_) => Ok(GkType::Int(IntKind::Char)),
        ExprKind::BoolLit(_) => Ok(GkType::Bool),
        ExprKind::Null => Ok(GkType::Null),
        ExprKind::Ident(n) => {
            if let Some(t) = ctx.scope.get(n) {
                Ok(t.clone())
            } else if builtin_const(n).is_some() {
                Ok(GkType::Int(IntKind::Int))
            } else {
                Err(err(
                    DiagKind::UnknownIdentifier,
                    span,
                    format!("`{n}` is not declared"),
                ))
            }
        }
        ExprKind::MapEntry(r) => {
            check_map_ref(ctx, r)?;
            Ok(GkType::Record(r.map.clone()))
        }
        ExprKind::Field { entry, field } => {
            check_map_ref(ctx, entry)?;
            let decl = &ctx.maps[&entry.map];
            decl.fields
                .iter()
                .find(|f| f.name == *field)
                .map(|f| f.ty.clone())
                .ok_or_else(|| {
                    err(
                        DiagKind::UnknownIdentifier,
                        span,
                        format!("map `{}` has no field `{field}`", entry.map),
                    )
                })
        }
        ExprKind::Unary { op, inner } => {
            let t = type_expr(ctx, inner)?;
            match op {
                UnOp::Neg => {
                    let k = expect_int(&t, span)?;
                    Ok(GkType::Int(if k.signed() { k } else { IntKind::SsizeT }))
                }
                UnOp::Not => {
                    expect_bool(&t, span)?;
                    Ok(GkType::Bool)
                }
            }
        }
        ExprKind::Binary { op, lhs, rhs } => {
            let op = *op;
            let lt = type_expr(ctx, lhs)?;
            let rt = type_expr(ctx, rhs)?;
            if op.is_logic() {
                expect_bool(&lt, span)?;
                expect_bool(&rt, span)?;
                return Ok(GkType::Bool);
            }
            if op.is_cmp() {
                let comparable = match (&lt, &rt) {
                    (GkType::Int(_), GkType::Int(_)) => true,
                    (GkType::Str, GkType::Str) => matches!(op, BinOp::Eq | BinOp::Ne),
                    (GkType::Array(a), GkType::Array(b)) => {
                        a.compatible(*b) && matches!(op, BinOp::Eq | BinOp::Ne)
                    }
                    (GkType::Record(_), GkType::Null)
                    | (GkType::Null, GkType::Record(_))
                    | (GkType::Null, GkType::Null) => matches!(op, BinOp::Eq | BinOp::Ne),
                    _ => false,
                };
                if !comparable {
                    return Err(err(
                        DiagKind::TypeMismatch,
                        span,
                        format!("cannot compare {} with {}", lt.display(), rt.display()),
                    ));
                }
                return Ok(GkType::Bool);
            }
            // arithmetic
            let a = expect_int(&lt, span)?;
            let b = expect_int(&rt, span)?;
            Ok(GkType::Int(promote(a, b)))
        }
        ExprKind::Index { base, idx } => {
            let bt = type_expr(ctx, base)?;
            let it = type_expr(ctx, idx)?;
            expect_int(&it, span)?;
            match bt {
                GkType::Array(el) => Ok(GkType::Int(elem_int_kind(el))),
                other => Err(err(
                    DiagKind::TypeMismatch,
                    span,
                    format!("cannot index into {}", other.display()),
                )),
            }
        }
        ExprKind::Slice { base, lo, hi } => {
            let bt = type_expr(ctx, base)?;
            let lt = type_expr(ctx, lo)?;
            expect_int(&lt, span)?;
            let ht = type_expr(ctx, hi)?;
            expect_int(&ht, span)?;
            match bt {
                GkType::Array(_) => Ok(bt),
                other => Err(err(
                    DiagKind::TypeMismatch,
                    span,
                    format!("cannot slice {}", other.display()),
                )),
            }
        }
        ExprKind::Quant { var, map, body, .. } => {
            let decl = ctx.maps.get(map).cloned().ok_or_else(|| {
                err(
                    DiagKind::UnknownIdentifier,
                    span,
                    format!("unknown map `{map}`"),
                )
            })?;
            if decl.keys.len() != 1 {
                return Err(err(
                    DiagKind::DesignError,
                    span,
                    "quantifiers are only supported over single-key maps",
                ));
            }
            let prev = ctx.scope.insert(var.clone(), decl.keys[0].ty.clone());
            let t = type_expr(ctx, body)?;
            match prev {
                Some(p) => {
                    ctx.scope.insert(var.clone(), p);
                }
                None => {
                    ctx.scope.remove(var);
                }
            }
            expect_bool(&t, span)?;
            Ok(GkType::Bool)
        }
    }
}

fn check_init(maps: &HashMap<String, MapDecl>, ia: &mut InitAssignment) -> Result<(), Diagnostic> {
    let mut ctx = Ctx {
        maps,
        scope: HashMap::new(),
        untrusted: None,
        seen_untrusted: false,
        atomic_stack: Vec::new(),
        post_requires: Vec::new(),
        action_ret: GkType::Void,
    };
    let tt = type_lvalue(&mut ctx, &mut ia.target)?;
    if !matches!(ia.target, LValue::MapField { .. }) {
        return Err(err(
            DiagKind::DesignError,
            ia.span,
            "init assignments must target a map entry field",
        ));
    }
    let vt = type_expr(&mut ctx, &mut ia.value)?;
    ensure_assignable(&vt, &tt, Some(&ia.value), ia.span)
}
