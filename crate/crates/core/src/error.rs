use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied argument violates an operation's precondition.
    #[error("invalid input: {0}")]
    Input(String),

    #[error("factorization of K + {ridge}I failed (condition estimate {condition:.3e})")]
    Factorization { ridge: f64, condition: f64 },

    /// A dataset (or other structured artifact) breaks one of its invariants.
    #[error("validation failed at episode {episode}, h {h}: {message}")]
    Validation {
        episode: usize,
        h: usize,
        message: String,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A configuration field is missing, malformed or out of range.
    #[error("invalid config field `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("degenerate regression design: {0}")]
    DegenerateDesign(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures of floating-point linear algebra, as opposed to bad input.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::Factorization { .. } | Error::DegenerateDesign(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
