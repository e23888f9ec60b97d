//! GKSpec frontend: lexer, parser, type checker, and canonical pretty-printer.

pub mod ast;
pub mod consts;
pub mod diag;
mod lexer;
mod parser;
pub mod pretty;
pub mod typecheck;

pub mod token;

pub use ast::*;
pub use diag::{DiagKind, Diagnostic};
pub use parser::{parse, parse_named};
pub use pretty::{expr_source, pretty_print};
pub use typecheck::{const_fold, is_untrusted_fn, typecheck, ActionMeta, TypedModelProgram};

/// Parse and typecheck in one step.
pub fn compile(source: &str, name: &str) -> Result<TypedModelProgram, Diagnostic> {
    let prog = parse_named(source, name)?;
    typecheck(&prog)
}
