use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    Dimension {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    /// Every importance weight underflowed to zero.
    #[error("degenerate importance weights: all {0} log-weights are -inf")]
    DegenerateWeights(usize),

    #[error("enumeration budget exceeded: {needed} > {budget}")]
    Budget { needed: u128, budget: u128 },

    #[error("input format error in {path}: {message}")]
    InputFormat { path: PathBuf, message: String },

    #[error("internal error: {0}")]
    Internal(String),

    #[error("verification failed: {0}")]
    Verification(String),

    #[error("training aborted: {0}")]
    TrainingAborted(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn input_format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::InputFormat {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Dimension { .. } | Error::Domain(_) | Error::Budget { .. } => 2,
            Error::InputFormat { .. } => 3,
            Error::Verification(_) => 4,
            Error::TrainingAborted(_) | Error::DegenerateWeights(_) => 5,
            Error::Numerical(_) | Error::Internal(_) | Error::Io(_) => 1,
        }
    }
}
