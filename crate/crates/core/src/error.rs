//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible or malformed tensor/layer shapes.
    #[error("shape error: {0}")]
    Shape(String),

    /// A caller-side contract was violated (non-scalar loss, missing
    /// gradient, out-of-range values, ...).
    #[error("contract error: {0}")]
    Contract(String),

    /// Invalid configuration value or key.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input file; `offset` is the byte position of the problem.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// Malformed or mismatched checkpoint data.
    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
