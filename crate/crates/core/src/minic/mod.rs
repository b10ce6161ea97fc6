//! The mini-C language: syntax, type checking, canonical printing and the
//! reference interpreter.

mod ast;
mod features;
mod interp;
pub mod lexer;
mod parser;
mod printer;
mod ty;

pub use ast::*;
pub use features::{extract_features, FeatureVector};
pub use interp::interpret;
pub use parser::{always_returns, assignable, parse_function, MAX_IDENT_LEN, MAX_PARAMS};
pub use printer::{pretty_print, print_expr, print_float, print_function_only};
pub use ty::{Signature, Ty};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrontendError {
    #[error("{line}:{col}: syntax error: {msg}")]
    Syntax { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: type error: {msg}")]
    Type { line: usize, col: usize, msg: String },
    #[error("{line}:{col}: unsupported feature: {msg}")]
    Unsupported { line: usize, col: usize, msg: String },
}

impl FrontendError {
    pub(crate) fn syntax(line: usize, col: usize, msg: &str) -> Self {
        FrontendError::Syntax { line, col, msg: msg.to_string() }
    }

    pub(crate) fn type_error(line: usize, col: usize, msg: &str) -> Self {
        FrontendError::Type { line, col, msg: msg.to_string() }
    }

    pub(crate) fn unsupported(line: usize, col: usize, msg: &str) -> Self {
        FrontendError::Unsupported { line, col, msg: msg.to_string() }
    }

    pub fn position(&self) -> (usize, usize) {
        match self {
            FrontendError::Syntax { line, col, .. }
            | FrontendError::Type { line, col, .. }
            | FrontendError::Unsupported { line, col, .. } => (*line, *col),
        }
    }
}
