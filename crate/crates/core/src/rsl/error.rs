use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

use super::lexer::Pos;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseErrorKind {
    Syntax,
    UnknownIdentifier,
    UnknownFunction,
    Unsupported,
    SourceTooLarge,
}

impl fmt::Display for ParseErrorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            ParseErrorKind::Syntax => "syntax error",
            ParseErrorKind::UnknownIdentifier => "unknown identifier",
            ParseErrorKind::UnknownFunction => "unknown function",
            ParseErrorKind::Unsupported => "unsupported construct",
            ParseErrorKind::SourceTooLarge => "source too large",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
#[error("{kind} at line {line}, column {col}: {message}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub line: u32,
    pub col: u32,
    pub message: String,
}

impl ParseError {
    pub(crate) fn new(kind: ParseErrorKind, pos: Pos, message: impl Into<String>) -> Self {
        Self {
            kind,
            line: pos.line,
            col: pos.col,
            message: message.into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Error)]
pub enum RuntimeError {
    #[error("step budget of {limit} exceeded")]
    StepBudgetExceeded { limit: u64 },
    #[error("collection of {len} elements exceeds the limit of {limit}")]
    CollectionTooLarge { len: usize, limit: usize },
    #[error("non-finite value produced by {what} at line {line}, column {col}")]
    NonFinite { what: String, line: u32, col: u32 },
    #[error("context key `{0}` is missing")]
    MissingContextKey(String),
    #[error("type mismatch at line {line}, column {col}: {message}")]
    TypeMismatch { message: String, line: u32, col: u32 },
    #[error("index {index} out of range for length {len} at line {line}, column {col}")]
    IndexOutOfRange { index: i64, len: usize, line: u32, col: u32 },
    #[error("variable `{name}` read before assignment at line {line}, column {col}")]
    UndefinedVariable { name: String, line: u32, col: u32 },
    #[error("record has no key `{0}`")]
    MissingRecordKey(String),
}

impl RuntimeError {
    pub(crate) fn type_mismatch(pos: Pos, message: impl Into<String>) -> Self {
        RuntimeError::TypeMismatch {
            message: message.into(),
            line: pos.line,
            col: pos.col,
        }
    }

    pub(crate) fn non_finite(pos: Pos, what: impl Into<String>) -> Self {
        RuntimeError::NonFinite {
            what: what.into(),
            line: pos.line,
            col: pos.col,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Error)]
#[error("program reads fields absent from the schema: {}", .unknown_fields.iter().cloned().collect::<Vec<_>>().join(", "))]
pub struct SchemaError {
    pub unknown_fields: BTreeSet<String>,
}
