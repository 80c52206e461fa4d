//! The host language: a small, dynamically typed Python subset with its own
//! tree-walking interpreter. Vaccination operates on this language's trees.

pub mod ast;
pub mod format;
pub mod interp;
pub mod lexer;
pub mod natives;
pub mod parser;
pub mod unparse;
pub mod value;

mod builtins;
mod methods;

pub use interp::{Frame, Interp, Locals, Output, Scope};
pub use parser::{parse_expression, parse_module};
pub use unparse::{unparse_block, unparse_expr};
pub use value::{Exception, Flow, Value};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("syntax error at line {line}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub message: String,
}

impl ParseError {
    pub fn new(line: usize, message: impl Into<String>) -> Self {
        ParseError {
            line,
            message: message.into(),
        }
    }
}
