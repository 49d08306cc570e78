use std::path::PathBuf;

/// Errors raised by the training laboratory.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument is outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Two operands have incompatible shapes.
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    /// A matrix or scalar contains NaN or infinity.
    #[error("non-finite value in {0}")]
    NonFinite(String),

    /// The training state cannot proceed (e.g. a zero sampling normalizer).
    #[error("degenerate state: {0}")]
    Degenerate(String),

    /// A theorem hypothesis required by the computation does not hold.
    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    /// An iterative computation did not reach a fixed point.
    #[error("no convergence after {rounds} rounds: {what}")]
    NoConvergence { what: String, rounds: usize },

    /// Malformed input text (CSV, config, network dump).
    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: u64, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
