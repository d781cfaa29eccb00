//! Parsing, control-flow graphs and loop unrolling for the controller language.

pub mod ast;
pub mod cfg;
pub mod lexer;
pub mod parser;
pub mod pretty;
pub mod unroll;

use std::fmt;

use serde::{Deserialize, Serialize};

pub use ast::{base_name, Expr, LValue, Slot, SourceProgram, Stmt, StmtKind, VarDecl};
pub use cfg::{build_cfg, Cfg, Node, NodeId, NodeKind};
pub use parser::parse;
pub use pretty::pretty_print;
pub use unroll::{unroll_loops, UNROLL_LIMIT};

/// 1-based source position.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Span {
    pub line: u32,
    pub col: u32,
}

impl fmt::Display for Span {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.line, self.col)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    Syntax,
    NonConstant,
    Undeclared,
    Unsupported,
    /// Unrolling would exceed [`UNROLL_LIMIT`] statement instances.
    UnrollLimit,
    IndexOutOfBounds,
    MissingLoop,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{span}: {message}")]
pub struct FrontendError {
    pub kind: ErrorKind,
    pub span: Span,
    pub message: String,
}

impl FrontendError {
    pub fn new(kind: ErrorKind, span: Span, message: impl Into<String>) -> Self {
        FrontendError { kind, span, message: message.into() }
    }
}
