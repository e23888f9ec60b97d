use std::fmt;

use super::token::Span;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DiagKind {
    SyntaxError,
    DuplicateName,
    UnknownKeyword,
    TypeMismatch,
    UnknownIdentifier,
    ArityMismatch,
    IllegalRequiresPlacement,
    DesignError,
}

impl fmt::Display for DiagKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            DiagKind::SyntaxError => "syntax error",
            DiagKind::DuplicateName => "duplicate name",
            DiagKind::UnknownKeyword => "unknown keyword",
            DiagKind::TypeMismatch => "type mismatch",
            DiagKind::UnknownIdentifier => "unknown identifier",
            DiagKind::ArityMismatch => "arity mismatch",
            DiagKind::IllegalRequiresPlacement => "illegal requires placement",
            DiagKind::DesignError => "design error",
        };
        f.write_str(s)
    }
}

/// A frontend diagnostic with source position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub kind: DiagKind,
    pub span: Span,
    pub message: String,
}

impl Diagnostic {
    pub fn new(kind: DiagKind, span: Span, message: impl Into<String>) -> Self {
        Diagnostic {
            kind,
            span,
            message: message.into(),
        }
    }

    pub fn syntax(span: Span, message: impl Into<String>) -> Self {
        Diagnostic::new(DiagKind::SyntaxError, span, message)
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}: {}", self.span, self.kind, self.message)
    }
}

impl std::error::Error for Diagnostic {}
