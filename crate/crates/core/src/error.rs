use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller broke an operation's precondition (shape, range, ordering).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("integration diverged at output step {step} (non-finite state)")]
    Divergence { step: usize },

    #[error("degenerate data: dimension {dim} has zero variance")]
    DegenerateData { dim: usize },

    #[error("singular linear system with lambda = {lambda}; increase the ridge regularization lambda")]
    Singular { lambda: f64 },

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("checkpoint schema version {found} is not supported (expected {expected}); regenerate the checkpoint with this tool version")]
    SchemaVersion { found: u32, expected: u32 },

    #[error("integrity error in {path}: {reason}")]
    Integrity { path: PathBuf, reason: String },

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }

    /// Process exit code: 2 for user/config errors, 3 for numerical or runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Contract(_) | Error::Config(_) | Error::SchemaVersion { .. } => 2,
            Error::Json(_) => 2,
            Error::Divergence { .. }
            | Error::DegenerateData { .. }
            | Error::Singular { .. }
            | Error::Numerical(_)
            | Error::Integrity { .. }
            | Error::Io { .. } => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

macro_rules! ensure {
    ($cond:expr, $($arg:tt)+) => {
        if !$cond {
            return Err($crate::error::Error::Contract(format!($($arg)+)));
        }
    };
}
pub(crate) use ensure;
