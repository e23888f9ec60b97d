use super::ast::*;
use super::diag::{DiagKind, Diagnostic};
use super::lexer::Lexer;
use super::token::{Span, Token, TokenKind};

const MAX_DEPTH: u32 = 200;

/// Parse GKSpec source into an untyped [`ModelProgram`].
pub fn parse(source: &str) -> Result<ModelProgram, Diagnostic> {
    parse_named(source, "model")
}

pub fn parse_named(source: &str, name: &str) -> Result<ModelProgram, Diagnostic> {
    let tokens = Lexer::new(source).tokenize()?;
    let mut p = Parser {
        tokens,
        pos: 0,
        depth: 0,
    };
    p.program(name)
}

struct Parser {
    tokens: Vec<Token>,
    pos: usize,
    depth: u32,
}

type PResult<T> = Result<T, Diagnostic>;

impl Parser {
    fn peek(&self) -> &TokenKind {
        &self.tokens[self.pos.min(self.tokens.len() - 1)].kind
    }

    fn peek_at(&self, n: usize) -> &TokenKind {
        &self.tokens[(self.pos + n).min(self.tokens.len() - 1)].kind
    }

    fn span(&self) -> Span {
        self.tokens[self.pos.min(self.tokens.len() - 1)].span
    }

    fn bump(&mut self) -> TokenKind {
        let t = self.tokens[self.pos.min(self.tokens.len() - 1)].kind.clone();
        if self.pos < self.tokens.len() - 1 {
            self.pos += 1;
        }
        t
    }

    fn eat(&mut self, kind: &TokenKind) -> bool {
        if self.peek() == kind {
            self.bump();
            true
        } else {
            false
        }
    }

    fn expect(&mut self, kind: TokenKind) -> PResult<()> {
        if self.peek() == &kind {
            self.bump();
            Ok(())
        } else {
            Err(Diagnostic::syntax(
                self.span(),
                format!("expected {}, found {}", kind, self.peek()),
            ))
        }
    }

    fn ident(&mut self) -> PResult<String> {
        match self.peek().clone() {
            TokenKind::Ident(s) => {
                self.bump();
                Ok(s)
            }
            other => Err(Diagnostic::syntax(
                self.span(),
                format!("expected identifier, found {other}"),
            )),
        }
    }

    fn enter(&mut self) -> PResult<()> {
        self.depth += 1;
        if self.depth > MAX_DEPTH {
            return Err(Diagnostic::syntax(self.span(), "nesting too deep"));
        }
        Ok(())
    }

    fn leave(&mut self) {
        self.depth -= 1;
    }

    fn program(&mut self, name: &str) -> PResult<ModelProgram> {
        let mut prog = ModelProgram {
            name: name.to_string(),
            maps: Vec::new(),
            actions: Vec::new(),
            init: Vec::new(),
        };
        loop {
            match self.peek() {
                TokenKind::Eof => break,
                TokenKind::KwMap => prog.maps.push(self.map_decl()?),
                TokenKind::KwAction => prog.actions.push(self.action_decl()?),
                TokenKind::KwInit => {
                    let block = self.init_block()?;
                    prog.init.extend(block);
                }
                other => {
                    let kind = if matches!(other, TokenKind::Ident(_)) {
                        DiagKind::UnknownKeyword
                    } else {
                        DiagKind::SyntaxError
                    };
                    return Err(Diagnostic::new(
                        kind,
                        self.span(),
                        format!("expected `Map`, `action`, or `init`, found {other}"),
                    ));
                }
            }
        }
        check_unique(&prog)?;
        Ok(prog)
    }

    fn map_decl(&mut self) -> PResult<MapDecl> {
        let span = self.span();
        self.expect(TokenKind::KwMap)?;
        let name = self.ident()?;
        self.expect(TokenKind::LParen)?;
        let keys = self.params()?;
        self.expect(TokenKind::RParen)?;
        self.expect(TokenKind::KwReturns)?;
        self.expect(TokenKind::LParen)?;
        let fields = self.params()?;
        self.expect(TokenKind::RParen)?;
        self.eat(&TokenKind::Semi);
        if keys.is_empty() {
            return Err(Diagnostic::syntax(
                span,
                format!("map `{name}` needs at least one key parameter"),
            ));
        }
        if fields.is_empty() {
            return Err(Diagnostic::syntax(
                span,
                format!("map `{name}` needs at least one value field"),
            ));
        }
        Ok(MapDecl {
            name,
            keys,
            fields,
            span,
        })
    }

    fn action_decl(&mut self) -> PResult<ActionDecl> {
        let span = self.span();
        self.expect(TokenKind::KwAction)?;
        let name = self.ident()?;
        self.expect(TokenKind::LParen)?;
        let params = self.params()?;
        self.expect(TokenKind::RParen)?;
        self.expect(TokenKind::KwReturns)?;
        self.expect(TokenKind::LParen)?;
        let returns = self.params()?;
        self.expect(TokenKind::RParen)?;
        self.expect(TokenKind::Assign)?;
        self.expect(TokenKind::LBrace)?;
        let mut body = Vec::new();
        let mut fuzz_hint = None;
        while !self.eat(&TokenKind::RBrace) {
            if self.peek() == &TokenKind::KwFuzz {
                let hint = self.fuzz_block()?;
                if fuzz_hint.is_some() {
                    return Err(Diagnostic::new(
                        DiagKind::DuplicateName,
                        span,
                        format!("action `{name}` has more than one fuzz block"),
                    ));
                }
                fuzz_hint = Some(hint);
            } else {
                body.push(self.stmt()?);
            }
        }
        self.eat(&TokenKind::Semi);
        Ok(ActionDecl {
            name,
            params,
            returns,
            body,
            fuzz_hint,
            span,
        })
    }

    fn fuzz_block(&mut self) -> PResult<Expr> {
        self.expect(TokenKind::KwFuzz)?;
        self.expect(TokenKind::LBrace)?;
        self.expect(TokenKind::KwRequires)?;
        self.expect(TokenKind::LParen)?;
        let e = self.expr()?;
        self.expect(TokenKind::RParen)?;
        self.expect(TokenKind::Semi)?;
        self.expect(TokenKind::RBrace)?;
        self.eat(&TokenKind::Semi);
        Ok(e)
    }

    fn init_block(&mut self) -> PResult<Vec<InitAssignment>> {
        self.expect(TokenKind::KwInit)?;
        self.expect(TokenKind::LBrace)?;
        let mut out = Vec::new();
        while !self.eat(&TokenKind::RBrace) {
            let span = self.span();
            let target = self.lvalue()?;
            self.expect(TokenKind::Assign)?;
            let value = self.expr()?;
            self.expect(TokenKind::Semi)?;
            out.push(InitAssignment {
                target,
                value,
                span,
            });
        }
        self.eat(&TokenKind::Semi);
        Ok(out)
    }

    fn params(&mut self) -> PResult<Vec<Param>> {
        let mut out = Vec::new();
        if self.peek() == &TokenKind::RParen {
            return Ok(out);
        }
        loop {
            let name = self.ident()?;
            self.expect(TokenKind::Colon)?;
            let ty = self.gk_type()?;
            out.push(Param { name, ty });
            if !self.eat(&TokenKind::Comma) {
                break;
            }
        }
        Ok(out)
    }

    fn gk_type(&mut self) -> PResult<GkType> {
        let span = self.span();
        let name = self.ident()?;
        let base = if name == "string" {
            GkType::Str
        } else if name == "void" {
            GkType::Void
        } else if let Some(k) = IntKind::from_name(&name) {
            GkType::Int(k)
        } else {
            return Err(Diagnostic::new(
                DiagKind::UnknownKeyword,
                span,
                format!("unknown type `{name}`"),
            ));
        };
        if self.eat(&TokenKind::LBracket) {
            self.expect(TokenKind::RBracket)?;
            let elem = match base {
                GkType::Void => ArrElem::Void,
                GkType::Int(k) => ArrElem::Int(k),
                other => {
                    return Err(Diagnostic::syntax(
                        span,
                        format!("`{}[]` is not a valid array type", other.display()),
                    ));
                }
            };
            return Ok(GkType::Array(elem));
        }
        Ok(base)
    }

    fn stmt(&mut self) -> PResult<Stmt> {
        self.enter()?;
        let r = self.stmt_inner();
        self.leave();
        r
    }

    fn stmt_inner(&mut self) -> PResult<Stmt> {
        let span = self.span();
        match self.peek().clone() {
            TokenKind::KwRequires => {
                self.bump();
                self.expect(TokenKind::LParen)?;
                let cond = self.expr()?;
                self.expect(TokenKind::RParen)?;
                self.expect(TokenKind::Semi)?;
                Ok(Stmt::Requires {
                    cond,
                    awaited: false,
                    span,
                })
            }
            TokenKind::KwAwait => {
                self.bump();
                self.expect(TokenKind::KwRequires)?;
                self.expect(TokenKind::LParen)?;
                let cond = self.expr()?;
                self.expect(TokenKind::RParen)?;
                self.expect(TokenKind::Semi)?;
                Ok(Stmt::Requires {
                    cond,
                    awaited: true,
                    span,
                })
            }
            TokenKind::KwAtomic => {
                self.bump();
                self.expect(TokenKind::LParen)?;
                let entry = self.map_ref()?;
                self.expect(TokenKind::RParen)?;
                self.expect(TokenKind::LBrace)?;
                let mut body = Vec::new();
                while !self.eat(&TokenKind::RBrace) {
                    body.push(self.stmt()?);
                }
                self.eat(&TokenKind::Semi);
                Ok(Stmt::Atomic { entry, body, span })
            }
            TokenKind::KwIf => {
                self.bump();
                self.expect(TokenKind::LParen)?;
                let cond = self.expr()?;
                self.expect(TokenKind::RParen)?;
                let then = self.block_or_stmt()?;
                let els = if self.eat(&TokenKind::KwElse) {
                    self.block_or_stmt()?
                } else {
                    Vec::new()
                };
                Ok(Stmt::If {
                    cond,
                    then,
                    els,
                    span,
                })
            }
            TokenKind::KwReturn => {
                self.bump();
                let value = if self.peek() == &TokenKind::Semi {
                    None
                } else {
                    Some(self.expr()?)
                };
                self.expect(TokenKind::Semi)?;
                Ok(Stmt::Return { value, span })
            }
            TokenKind::KwDelete => {
                self.bump();
                let entry = self.map_ref()?;
                self.expect(TokenKind::Semi)?;
                Ok(Stmt::Delete { entry, span })
            }
            TokenKind::KwExtern => {
                let (func, args) = self.extern_call()?;
                self.expect(TokenKind::Semi)?;
                Ok(Stmt::Extern {
                    bind: None,
                    func,
                    args,
                    span,
                })
            }
            TokenKind::Ident(_) => self.assign_or_local(span),
            other => Err(Diagnostic::syntax(
                span,
                format!("expected statement, found {other}"),
            )),
        }
    }

    fn block_or_stmt(&mut self) -> PResult<Vec<Stmt>> {
        if self.eat(&TokenKind::LBrace) {
            let mut body = Vec::new();
            while !self.eat(&TokenKind::RBrace) {
                body.push(self.stmt()?);
            }
            self.eat(&TokenKind::Semi);
            Ok(body)
        } else {
            Ok(vec![self.stmt()?])
        }
    }

    fn extern_call(&mut self) -> PResult<(String, Vec<Expr>)> {
        self.expect(TokenKind::KwExtern)?;
        self.expect(TokenKind::KwCall)?;
        let func = self.ident()?;
        self.expect(TokenKind::LParen)?;
        let args = self.args()?;
        self.expect(TokenKind::RParen)?;
        Ok((func, args))
    }

    /// Statements starting with an identifier: local declaration, extern
    /// binding, or assignment to an lvalue.
    fn assign_or_local(&mut self, span: Span) -> PResult<Stmt> {
        // `name : type := ...` is a local declaration.
        if matches!(self.peek_at(1), TokenKind::Colon) {
            let name = self.ident()?;
            self.expect(TokenKind::Colon)?;
            let ty = self.gk_type()?;
            self.expect(TokenKind::Assign)?;
            if self.peek() == &TokenKind::KwExtern {
                let (func, args) = self.extern_call()?;
                self.expect(TokenKind::Semi)?;
                return Ok(Stmt::Extern {
                    bind: Some(ExternBind {
                        name,
                        declared_ty: Some(ty),
                    }),
                    func,
                    args,
                    span,
                });
            }
            let value = self.expr()?;
            self.expect(TokenKind::Semi)?;
            return Ok(Stmt::Local {
                name,
                ty,
                value,
                span,
            });
        }
        let target = self.lvalue()?;
        self.expect(TokenKind::Assign)?;
        if self.peek() == &TokenKind::KwExtern {
            let name = match target {
                LValue::Var(n) => n,
                _ => {
                    return Err(Diagnostic::syntax(
                        span,
                        "an extern call result can only be bound to a plain variable",
                    ));
                }
            };
            let (func, args) = self.extern_call()?;
            self.expect(TokenKind::Semi)?;
            return Ok(Stmt::Extern {
                bind: Some(ExternBind {
                    name,
                    declared_ty: None,
                }),
                func,
                args,
                span,
            });
        }
        let value = self.expr()?;
        self.expect(TokenKind::Semi)?;
        Ok(Stmt::Assign {
            target,
            value,
            span,
        })
    }

    fn map_ref(&mut self) -> PResult<MapRef> {
        let map = self.ident()?;
        self.expect(TokenKind::LParen)?;
        let keys = self.args()?;
        self.expect(TokenKind::RParen)?;
        Ok(MapRef { map, keys })
    }

    fn lvalue(&mut self) -> PResult<LValue> {
        let name = self.ident()?;
        let mut lv = if self.peek() == &TokenKind::LParen {
            self.bump();
            let keys = self.args()?;
            self.expect(TokenKind::RParen)?;
            self.expect(TokenKind::Dot)?;
            let field = self.ident()?;
            LValue::MapField {
                entry: MapRef { map: name, keys },
                field,
            }
        } else {
            LValue::Var(name)
        };
        while self.eat(&TokenKind::LBracket) {
            let lo = self.expr()?;
            if self.eat(&TokenKind::Colon) {
                let hi = self.expr()?;
                self.expect(TokenKind::RBracket)?;
                lv = LValue::Slice {
                    base: Box::new(lv),
                    lo,
                    hi,
                };
            } else {
                self.expect(TokenKind::RBracket)?;
                lv = LValue::Index {
                    base: Box::new(lv),
                    idx: lo,
                };
            }
        }
        Ok(lv)
    }

    fn args(&mut self) -> PResult<Vec<Expr>> {
        let mut out = Vec::new();
        if self.peek() == &TokenKind::RParen {
            return Ok(out);
        }
        loop {
            out.push(self.expr()?);
            if !self.eat(&TokenKind::Comma) {
                break;
            }
        }
        Ok(out)
    }

    // ---- expressions ----

    pub fn expr(&mut self) -> PResult<Expr> {
        self.enter()?;
        let r = self.quant_expr();
        self.leave();
        r
    }

    fn quant_expr(&mut self) -> PResult<Expr> {
        let span = self.span();
        let q = match self.peek() {
            TokenKind::KwForall => Quantifier::Forall,
            TokenKind::KwExists => Quantifier::Exists,
            _ => return self.implies_expr(),
        };
        self.bump();
        let var = self.ident()?;
        self.expect(TokenKind::KwIn)?;
        let map = self.ident()?;
        self.expect(TokenKind::ColonColon)?;
        let body = self.expr()?;
        Ok(Expr::new(
            ExprKind::Quant {
                q,
                var,
                map,
                body: Box::new(body),
            },
            span,
        ))
    }

    fn implies_expr(&mut self) -> PResult<Expr> {
        let lhs = self.or_expr()?;
        if self.eat(&TokenKind::Arrow) {
            let span = lhs.span;
            self.enter()?;
            let rhs = self.quant_expr()?; // right-associative
            self.leave();
            return Ok(Expr::new(
                ExprKind::Binary {
                    op: BinOp::Implies,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
            ));
        }
        Ok(lhs)
    }

    fn or_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.and_expr()?;
        while self.eat(&TokenKind::KwOr) {
            let rhs = self.and_expr()?;
            let span = lhs.span;
            lhs = Expr::new(
                ExprKind::Binary {
                    op: BinOp::Or,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
            );
        }
        Ok(lhs)
    }

    fn and_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.not_expr()?;
        while self.eat(&TokenKind::KwAnd) {
            let rhs = self.not_expr()?;
            let span = lhs.span;
            lhs = Expr::new(
                ExprKind::Binary {
                    op: BinOp::And,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
            );
        }
        Ok(lhs)
    }

    fn not_expr(&mut self) -> PResult<Expr> {
        if self.peek() == &TokenKind::KwNot {
            let span = self.span();
            self.bump();
            self.enter()?;
            let inner = self.not_expr()?;
            self.leave();
            return Ok(Expr::new(
                ExprKind::Unary {
                    op: UnOp::Not,
                    inner: Box::new(inner),
                },
                span,
            ));
        }
        self.cmp_expr()
    }

    fn cmp_expr(&mut self) -> PResult<Expr> {
        let lhs = self.add_expr()?;
        let op = match self.peek() {
            TokenKind::Eq => BinOp::Eq,
            TokenKind::Ne => BinOp::Ne,
            TokenKind::Lt => BinOp::Lt,
            TokenKind::Le => BinOp::Le,
            TokenKind::Gt => BinOp::Gt,
            TokenKind::Ge => BinOp::Ge,
            _ => return Ok(lhs),
        };
        self.bump();
        let rhs = self.add_expr()?;
        let span = lhs.span;
        Ok(Expr::new(
            ExprKind::Binary {
                op,
                lhs: Box::new(lhs),
                rhs: Box::new(rhs),
            },
            span,
        ))
    }

    fn add_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.mul_expr()?;
        loop {
            let op = match self.peek() {
                TokenKind::Plus => BinOp::Add,
                TokenKind::Minus => BinOp::Sub,
                _ => break,
            };
            self.bump();
            let rhs = self.mul_expr()?;
            let span = lhs.span;
            lhs = Expr::new(
                ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
            );
        }
        Ok(lhs)
    }

    fn mul_expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary_expr()?;
        loop {
            let op = match self.peek() {
                TokenKind::Star => BinOp::Mul,
                TokenKind::Slash => BinOp::Div,
                TokenKind::Percent => BinOp::Mod,
                _ => break,
            };
            self.bump();
            let rhs = self.unary_expr()?;
            let span = lhs.span;
            lhs = Expr::new(
                ExprKind::Binary {
                    op,
                    lhs: Box::new(lhs),
                    rhs: Box::new(rhs),
                },
                span,
            );
        }
        Ok(lhs)
    }

    fn unary_expr(&mut self) -> PResult<Expr> {
        if self.peek() == &TokenKind::Minus {
            let span = self.span();
            self.bump();
            self.enter()?;
            let inner = self.unary_expr()?;
            self.leave();
            return Ok(Expr::new(
                ExprKind::Unary {
                    op: UnOp::Neg,
                    inner: Box::new(inner),
                },
                span,
            ));
        }
        self.postfix_expr()
    }

    fn postfix_expr(&mut self) -> PResult<Expr> {
        let mut e = self.primary_expr()?;
        loop {
            if self.eat(&TokenKind::LBracket) {
                let lo = self.expr()?;
                if self.eat(&TokenKind::Colon) {
                    let hi = self.expr()?;
                    self.expect(TokenKind::RBracket)?;
                    let span = e.span;
                    e = Expr::new(
                        ExprKind::Slice {
                            base: Box::new(e),
                            lo: Box::new(lo),
                            hi: Box::new(hi),
                        },
                        span,
                    );
                } else {
                    self.expect(TokenKind::RBracket)?;
                    let span = e.span;
                    e = Expr::new(
                        ExprKind::Index {
                            base: Box::new(e),
                            idx: Box::new(lo),
                        },
                        span,
                    );
                }
            } else if self.peek() == &TokenKind::Dot {
                // Field access is only legal on a map entry.
                let span = e.span;
                let entry = match e.kind {
                    ExprKind::MapEntry(r) => r,
                    _ => {
                        return Err(Diagnostic::syntax(
                            self.span(),
                            "field access is only valid on a map entry",
                        ));
                    }
                };
                self.bump();
                let field = self.ident()?;
                e = Expr::new(ExprKind::Field { entry, field }, span);
            } else {
                break;
            }
        }
        Ok(e)
    }

    fn primary_expr(&mut self) -> PResult<Expr> {
        let span = self.span();
        match self.peek().clone() {
            TokenKind::Int(v) => {
                self.bump();
                Ok(Expr::new(ExprKind::IntLit(v), span))
            }
            TokenKind::Str(s) => {
                self.bump();
                Ok(Expr::new(ExprKind::StrLit(s), span))
            }
            TokenKind::Char(c) => {
                self.bump();
                Ok(Expr::new(ExprKind::CharLit(c), span))
            }
            TokenKind::KwTrue => {
                self.bump();
                Ok(Expr::new(ExprKind::BoolLit(true), span))
            }
            TokenKind::KwFalse => {
                self.bump();
                Ok(Expr::new(ExprKind::BoolLit(false), span))
            }
            TokenKind::KwNull => {
                self.bump();
                Ok(Expr::new(ExprKind::Null, span))
            }
            TokenKind::LParen => {
                self.bump();
                let e = self.expr()?;
                self.expect(TokenKind::RParen)?;
                Ok(e)
            }
            TokenKind::Ident(name) => {
                self.bump();
                if self.peek() == &TokenKind::LParen {
                    self.bump();
                    let keys = self.args()?;
                    self.expect(TokenKind::RParen)?;
                    Ok(Expr::new(
                        ExprKind::MapEntry(MapRef { map: name, keys }),
                        span,
                    ))
                } else {
                    Ok(Expr::new(ExprKind::Ident(name), span))
                }
            }
            other => Err(Diagnostic::syntax(
                span,
                format!("expected expression, found {other}"),
            )),
        }
    }
}

fn check_unique(prog: &ModelProgram) -> Result<(), Diagnostic> {
    let mut seen = std::collections::HashSet::new();
    for m in &prog.maps {
        if !seen.insert(m.name.clone()) {
            return Err(Diagnostic::new(
                DiagKind::DuplicateName,
                m.span,
                format!("map `{}` declared more than once", m.name),
            ));
        }
    }
    for a in &prog.actions {
        if !seen.insert(a.name.clone()) {
            return Err(Diagnostic::new(
                DiagKind::DuplicateName,
                a.span,
                format!("`{}` declared more than once", a.name),
            ));
        }
    }
    Ok(())
}
