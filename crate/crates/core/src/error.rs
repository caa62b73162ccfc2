use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid format: {0}")]
    InvalidFormat(String),

    #[error("enumeration refused: format width {width} exceeds {limit} bits")]
    EnumerationRefused { width: u32, limit: u32 },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("underdetermined fit: {0}")]
    Underdetermined(String),

    #[error("insufficient span: {0}")]
    InsufficientSpan(String),

    #[error("no critical point: {0}")]
    NoCriticalPoint(String),

    #[error("invalid constants: {0}")]
    InvalidConstants(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn parse(line: usize, column: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            column,
            message: message.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
