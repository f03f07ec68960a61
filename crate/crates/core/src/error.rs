//! Error type shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Operands have incompatible shapes.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    /// A documented precondition was violated.
    #[error("contract violation: {0}")]
    Contract(String),

    /// A cosine-distance quantity was requested for a zero gradient.
    #[error("degenerate gradient: {0}")]
    DegenerateGradient(String),

    /// Every restart of a reconstruction attempt failed.
    #[error("attack failed: {0}")]
    AttackFailed(String),

    /// Spearman correlation is undefined for the given inputs.
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),

    /// Bad or inconsistent experiment configuration.
    #[error("config error: {0}")]
    Config(String),

    /// Malformed input data (datasets, weight files).
    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code used by the CLI: 1 config, 2 data, 3 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 1,
            Error::Data(_) => 2,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
