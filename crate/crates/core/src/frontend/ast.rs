use serde::{Deserialize, Serialize};

use super::token::Span;

/// Integer kinds with fixed widths mirroring the POSIX types the models use.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum IntKind {
    /// 32-bit signed.
    Int,
    /// 64-bit signed.
    OffT,
    /// 64-bit unsigned (values restricted to the non-negative i64 range at runtime).
    SizeT,
    /// 64-bit signed.
    SsizeT,
    /// 8-bit unsigned.
    Char,
}

impl IntKind {
    pub fn name(self) -> &'static str {
        match self {
            IntKind::Int => "int",
            IntKind::OffT => "off_t",
            IntKind::SizeT => "size_t",
            IntKind::SsizeT => "ssize_t",
            IntKind::Char => "char",
        }
    }

    pub fn signed(self) -> bool {
        matches!(self, IntKind::Int | IntKind::OffT | IntKind::SsizeT)
    }

    pub fn bits(self) -> u32 {
        match self {
            IntKind::Int => 32,
            IntKind::Char => 8,
            _ => 64,
        }
    }

    pub fn min(self) -> i128 {
        if self.signed() {
            -(1i128 << (self.bits() - 1))
        } else {
            0
        }
    }

    pub fn max(self) -> i128 {
        if self.signed() {
            (1i128 << (self.bits() - 1)) - 1
        } else if self.bits() == 64 {
            // size_t payloads live in an i64; cap at i64::MAX
            i64::MAX as i128
        } else {
            (1i128 << self.bits()) - 1
        }
    }

    pub fn contains(self, v: i128) -> bool {
        v >= self.min() && v <= self.max()
    }

    /// Range-subset check used for implicit widening.
    pub fn widens_to(self, target: IntKind) -> bool {
        target.min() <= self.min() && target.max() >= self.max()
    }

    pub fn from_name(name: &str) -> Option<IntKind> {
        Some(match name {
            "int" => IntKind::Int,
            "off_t" => IntKind::OffT,
            "size_t" => IntKind::SizeT,
            "ssize_t" => IntKind::SsizeT,
            "char" => IntKind::Char,
            _ => return None,
        })
    }
}

/// Element kind of an array type. `void[]` is an untyped byte buffer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ArrElem {
    Void,
    Int(IntKind),
}

impl ArrElem {
    pub fn bits(self) -> u32 {
        match self {
            ArrElem::Void => 8,
            ArrElem::Int(k) => k.bits(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ArrElem::Void => "void",
            ArrElem::Int(k) => k.name(),
        }
    }

    /// Arrays are comparable and assignable when their element widths match.
    pub fn compatible(self, other: ArrElem) -> bool {
        self.bits() == other.bits()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum GkType {
    Int(IntKind),
    Str,
    Void,
    Array(ArrElem),
    /// Record of the named map's value fields.
    Record(String),
    /// Internal type of boolean expressions; not declarable in source.
    Bool,
    /// Internal type of the NULL literal before unification.
    Null,
}

impl GkType {
    pub fn display(&self) -> String {
        match self {
            GkType::Int(k) => k.name().to_string(),
            GkType::Str => "string".to_string(),
            GkType::Void => "void".to_string(),
            GkType::Array(e) => format!("{}[]", e.name()),
            GkType::Record(m) => format!("entry of {m}"),
            GkType::Bool => "bool".to_string(),
            GkType::Null => "NULL".to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub ty: GkType,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapDecl {
    pub name: String,
    pub keys: Vec<Param>,
    pub fields: Vec<Param>,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDecl {
    pub name: String,
    pub params: Vec<Param>,
    pub returns: Vec<Param>,
    pub body: Vec<Stmt>,
    /// Soft constraint from a `fuzz { requires (...); }` block, if any.
    pub fuzz_hint: Option<Expr>,
    #[serde(skip)]
    pub span: Span,
}

impl ActionDecl {
    /// Primary return type: the first declared return parameter, or void.
    pub fn return_type(&self) -> GkType {
        self.returns
            .first()
            .map(|p| p.ty.clone())
            .unwrap_or(GkType::Void)
    }
}

/// Reference to a map entry: `map(key, ...)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapRef {
    pub map: String,
    pub keys: Vec<Expr>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InitAssignment {
    pub target: LValue,
    pub value: Expr,
    #[serde(skip)]
    pub span: Span,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProgram {
    pub name: String,
    pub maps: Vec<MapDecl>,
    pub actions: Vec<ActionDecl>,
    pub init: Vec<InitAssignment>,
}

impl ModelProgram {
    pub fn map(&self, name: &str) -> Option<&MapDecl> {
        self.maps.iter().find(|m| m.name == name)
    }

    pub fn action(&self, name: &str) -> Option<&ActionDecl> {
        self.actions.iter().find(|a| a.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternBind {
    pub name: String,
    /// Present when the binding also declares a local (`x: t := extern call ...`).
    pub declared_ty: Option<GkType>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Stmt {
    Local {
        name: String,
        ty: GkType,
        value: Expr,
        #[serde(skip)]
        span: Span,
    },
    Assign {
        target: LValue,
        value: Expr,
        #[serde(skip)]
        span: Span,
    },
    Requires {
        cond: Expr,
        awaited: bool,
        #[serde(skip)]
        span: Span,
    },
    Atomic {
        entry: MapRef,
        body: Vec<Stmt>,
        #[serde(skip)]
        span: Span,
    },
    Extern {
        bind: Option<ExternBind>,
        func: String,
        args: Vec<Expr>,
        #[serde(skip)]
        span: Span,
    },
    If {
        cond: Expr,
        then: Vec<Stmt>,
        els: Vec<Stmt>,
        #[serde(skip)]
        span: Span,
    },
    Return {
        value: Option<Expr>,
        #[serde(skip)]
        span: Span,
    },
    Delete {
        entry: MapRef,
        #[serde(skip)]
        span: Span,
    },
}

impl Stmt {
    pub fn span(&self) -> Span {
        match self {
            Stmt::Local { span, .. }
            | Stmt::Assign { span, .. }
            | Stmt::Requires { span, .. }
            | Stmt::Atomic { span, .. }
            | Stmt::Extern { span, .. }
            | Stmt::If { span, .. }
            | Stmt::Return { span, .. }
            | Stmt::Delete { span, .. } => *span,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum LValue {
    Var(String),
    MapField {
        entry: MapRef,
        field: String,
    },
    Index {
        base: Box<LValue>,
        idx: Expr,
    },
    Slice {
        base: Box<LValue>,
        lo: Expr,
        hi: Expr,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnOp {
    Neg,
    Not,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BinOp {
    Or,
    And,
    Implies,
    Eq,
    Ne,
    Lt,
    Le,
    Gt,
    Ge,
    Add,
    Sub,
    Mul,
    Div,
    Mod,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Or => "or",
            BinOp::And => "and",
            BinOp::Implies => "->",
            BinOp::Eq => "==",
            BinOp::Ne => "!=",
            BinOp::Lt => "<",
            BinOp::Le => "<=",
            BinOp::Gt => ">",
            BinOp::Ge => ">=",
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Mod => "%",
        }
    }

    pub fn is_cmp(self) -> bool {
        matches!(
            self,
            BinOp::Eq | BinOp::Ne | BinOp::Lt | BinOp::Le | BinOp::Gt | BinOp::Ge
        )
    }

    pub fn is_logic(self) -> bool {
        matches!(self, BinOp::Or | BinOp::And | BinOp::Implies)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Quantifier {
    Forall,
    Exists,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expr {
    pub kind: ExprKind,
    #[serde(skip)]
    pub span: Span,
    /// Filled by the type checker; None on freshly parsed trees.
    pub ty: Option<GkType>,
}

impl Expr {
    pub fn new(kind: ExprKind, span: Span) -> Expr {
        Expr {
            kind,
            span,
            ty: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ExprKind {
    IntLit(i128),
    StrLit(String),
    CharLit(u8),
    BoolLit(bool),
    Null,
    Ident(String),
    MapEntry(MapRef),
    Field {
        entry: MapRef,
        field: String,
    },
    Unary {
        op: UnOp,
        inner: Box<Expr>,
    },
    Binary {
        op: BinOp,
        lhs: Box<Expr>,
        rhs: Box<Expr>,
    },
    Index {
        base: Box<Expr>,
        idx: Box<Expr>,
    },
    Slice {
        base: Box<Expr>,
        lo: Box<Expr>,
        hi: Box<Expr>,
    },
    Quant {
        q: Quantifier,
        var: String,
        map: String,
        body: Box<Expr>,
    },
}

/// Walk all identifiers referenced by an expression.
pub fn visit_idents(e: &Expr, f: &mut impl FnMut(&str)) {
    match &e.kind {
        ExprKind::Ident(n) => f(n),
        ExprKind::MapEntry(r) | ExprKind::Field { entry: r, .. } => {
            for k in &r.keys {
                visit_idents(k, f);
            }
        }
        ExprKind::Unary { inner, .. } => visit_idents(inner, f),
        ExprKind::Binary { lhs, rhs, .. } => {
            visit_idents(lhs, f);
            visit_idents(rhs, f);
        }
        ExprKind::Index { base, idx } => {
            visit_idents(base, f);
            visit_idents(idx, f);
        }
        ExprKind::Slice { base, lo, hi } => {
            visit_idents(base, f);
            visit_idents(lo, f);
            visit_idents(hi, f);
        }
        ExprKind::Quant { body, .. } => visit_idents(body, f),
        _ => {}
    }
}

/// Replace every free occurrence of `name` with a clone of `with`.
pub fn substitute(e: &Expr, name: &str, with: &Expr) -> Expr {
    let kind = match &e.kind {
        ExprKind::Ident(n) if n == name => return with.clone(),
        ExprKind::MapEntry(r) => ExprKind::MapEntry(subst_ref(r, name, with)),
        ExprKind::Field { entry, field } => ExprKind::Field {
            entry: subst_ref(entry, name, with),
            field: field.clone(),
        },
        ExprKind::Unary { op, inner } => ExprKind::Unary {
            op: *op,
            inner: Box::new(substitute(inner, name, with)),
        },
        ExprKind::Binary { op, lhs, rhs } => ExprKind::Binary {
            op: *op,
            lhs: Box::new(substitute(lhs, name, with)),
            rhs: Box::new(substitute(rhs, name, with)),
        },
        ExprKind::Index { base, idx } => ExprKind::Index {
            base: Box::new(substitute(base, name, with)),
            idx: Box::new(substitute(idx, name, with)),
        },
        ExprKind::Slice { base, lo, hi } => ExprKind::Slice {
            base: Box::new(substitute(base, name, with)),
            lo: Box::new(substitute(lo, name, with)),
            hi: Box::new(substitute(hi, name, with)),
        },
        ExprKind::Quant { q, var, map, body } if var != name => ExprKind::Quant {
            q: *q,
            var: var.clone(),
            map: map.clone(),
            body: Box::new(substitute(body, name, with)),
        },
        other => other.clone(),
    };
    Expr {
        kind,
        span: e.span,
        ty: e.ty.clone(),
    }
}

fn subst_ref(r: &MapRef, name: &str, with: &Expr) -> MapRef {
    MapRef {
        map: r.map.clone(),
        keys: r.keys.iter().map(|k| substitute(k, name, with)).collect(),
    }
}
