use std::fmt;

/// Source position, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenKind {
    Ident(String),
    Int(i128),
    Str(String),
    Char(u8),

    // keywords
    KwMap,
    KwReturns,
    KwAction,
    KwInit,
    KwRequires,
    KwAwait,
    KwAtomic,
    KwIf,
    KwElse,
    KwReturn,
    KwExtern,
    KwCall,
    KwDelete,
    KwFuzz,
    KwAnd,
    KwOr,
    KwNot,
    KwForall,
    KwExists,
    KwIn,
    KwNull,
    KwTrue,
    KwFalse,

    // punctuation
    LParen,
    RParen,
    LBrace,
    RBrace,
    LBracket,
    RBracket,
    Semi,
    Comma,
    Colon,
    ColonColon,
    Dot,
    Assign, // :=
    Arrow,  // ->
    Eq,
    Ne,
    Le,
    Ge,
    Lt,
    Gt,
    Plus,
    Minus,
    Star,
    Slash,
    Percent,

    Eof,
}

impl fmt::Display for TokenKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        use TokenKind::*;
        match self {
            Ident(s) => write!(f, "identifier `{s}`"),
            Int(v) => write!(f, "integer `{v}`"),
            Str(_) => write!(f, "string literal"),
            Char(_) => write!(f, "char literal"),
            KwMap => write!(f, "`Map`"),
            KwReturns => write!(f, "`returns`"),
            KwAction => write!(f, "`action`"),
            KwInit => write!(f, "`init`"),
            KwRequires => write!(f, "`requires`"),
            KwAwait => write!(f, "`await`"),
            KwAtomic => write!(f, "`atomic`"),
            KwIf => write!(f, "`if`"),
            KwElse => write!(f, "`else`"),
            KwReturn => write!(f, "`return`"),
            KwExtern => write!(f, "`extern`"),
            KwCall => write!(f, "`call`"),
            KwDelete => write!(f, "`delete`"),
            KwFuzz => write!(f, "`fuzz`"),
            KwAnd => write!(f, "`and`"),
            KwOr => write!(f, "`or`"),
            KwNot => write!(f, "`not`"),
            KwForall => write!(f, "`forall`"),
            KwExists => write!(f, "`exists`"),
            KwIn => write!(f, "`in`"),
            KwNull => write!(f, "`NULL`"),
            KwTrue => write!(f, "`true`"),
            KwFalse => write!(f, "`false`"),
            LParen => write!(f, "`(`"),
            RParen => write!(f, "`)`"),
            LBrace => write!(f, "`{{`"),
            RBrace => write!(f, "`}}`"),
            LBracket => write!(f, "`[`"),
            RBracket => write!(f, "`]`"),
            Semi => write!(f, "`;`"),
            Comma => write!(f, "`,`"),
            Colon => write!(f, "`:`"),
            ColonColon => write!(f, "`::`"),
            Dot => write!(f, "`.`"),
            Assign => write!(f, "`:=`"),
            Arrow => write!(f, "`->`"),
            Eq => write!(f, "`==`"),
            Ne => write!(f, "`!=`"),
            Le => write!(f, "`<=`"),
            Ge => write!(f, "`>=`"),
            Lt => write!(f, "`<`"),
            Gt => write!(f, "`>`"),
            Plus => write!(f, "`+`"),
            Minus => write!(f, "`-`"),
            Star => write!(f, "`*`"),
            Slash => write!(f, "`/`"),
            Percent => write!(f, "`%`"),
            Eof => write!(f, "end of input"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Token {
    pub kind: TokenKind,
    pub span: Span,
}

pub fn keyword(ident: &str) -> Option<TokenKind> {
    use TokenKind::*;
    Some(match ident {
        "Map" => KwMap,
        "returns" => KwReturns,
        "action" => KwAction,
        "init" => KwInit,
        "requires" => KwRequires,
        "await" => KwAwait,
        "atomic" => KwAtomic,
        "if" => KwIf,
        "else" => KwElse,
        "return" => KwReturn,
        "extern" => KwExtern,
        "call" => KwCall,
        "delete" => KwDelete,
        "fuzz" => KwFuzz,
        "and" => KwAnd,
        "or" => KwOr,
        "not" => KwNot,
        "forall" => KwForall,
        "exists" => KwExists,
        "in" => KwIn,
        "NULL" => KwNull,
        "true" => KwTrue,
        "false" => KwFalse,
        _ => return None,
    })
}
