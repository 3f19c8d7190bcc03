use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the lab.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unknown landscape `{name}`; valid names: {}", valid.join(", "))]
    UnknownLandscape { name: String, valid: Vec<&'static str> },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("iterate overflowed at step {n}")]
    Overflow { n: u64 },

    #[error("insufficient data: need at least {required} samples, got {accepted}")]
    InsufficientData { accepted: usize, required: usize },

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("layout mismatch: {0}")]
    Layout(String),

    #[error("hypothesis violated: {0}")]
    Hypothesis(String),

    #[error("config error at line {line}, key `{key}`: {message}")]
    Config {
        line: usize,
        key: String,
        message: String,
    },

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Process exit status: 1 for configuration and input errors, 2 for
    /// rejected hypotheses, 3 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Hypothesis(_) | Error::Infeasible(_) => 2,
            Error::Io { .. } => 3,
            _ => 1,
        }
    }
}
