use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid shapes, hyperparameters or settings.
    #[error("configuration error: {0}")]
    Config(String),
    /// An operation was called in the wrong order (e.g. backward before forward).
    #[error("state error: {0}")]
    State(String),
    /// Malformed or inconsistent input data.
    #[error("data error: {0}")]
    Data(String),
    /// Parse failure at a byte offset of a binary file.
    #[error("parse error at byte offset {offset}: {message}")]
    ParseAt { offset: usize, message: String },
    /// Parse failure on a given (1-based) line of a text file.
    #[error("parse error on line {line}: {message}")]
    ParseLine { line: usize, message: String },
    /// NaN/Inf or another numeric breakdown.
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
