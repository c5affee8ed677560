//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed input file (CoNLL block, embedding line, CSV row).
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A file held no usable sentences.
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),

    /// Invalid configuration or incompatible inputs.
    #[error("config error: {0}")]
    Config(String),

    /// Tensor/vector dimensions do not line up.
    #[error("shape error: {0}")]
    Shape(String),

    /// A value violated a documented contract (labels, distributions, curves).
    #[error("validation error: {0}")]
    Validation(String),

    /// Non-finite values encountered during numeric work.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Checkpoint could not be read, written, or matched to the run.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn parse(line: usize, message: impl Into<String>) -> Error {
    Error::Parse { line, message: message.into() }
}
