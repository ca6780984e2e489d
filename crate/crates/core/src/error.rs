use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the engine.
///
/// Variants group into the four failure classes the CLI maps to exit codes:
/// configuration, data, numeric, and contract violations.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: dimension mismatch between {left:?} and {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("{op}: domain error: {msg}")]
    Domain { op: &'static str, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("contract violated: {0}")]
    Contract(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("model initialization error: {0}")]
    Init(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("format error: {0}")]
    Format(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse failure class, used for process exit codes and FFI status codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
}

impl Error {
    pub fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Init(_) | Error::Contract(_) => ErrorClass::Config,
            Error::Numeric(_) | Error::Domain { .. } | Error::Dimension { .. } => {
                ErrorClass::Numeric
            }
            Error::Schema(_)
            | Error::Lookup(_)
            | Error::Parse { .. }
            | Error::Io { .. }
            | Error::Format(_) => ErrorClass::Data,
        }
    }

    /// Process exit code: 2 config, 3 data, 4 numeric.
    pub fn exit_code(&self) -> i32 {
        match self.class() {
            ErrorClass::Config => 2,
            ErrorClass::Data => 3,
            ErrorClass::Numeric => 4,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Format(e.to_string())
    }
}
