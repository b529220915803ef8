use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    Input(String),

    #[error("unsupported audio format: {0}")]
    Format(String),

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Graph(#[from] replayscope_autodiff::Error),
}

/// Coarse error classes; the CLI maps them onto exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorCategory {
    Config,
    Input,
    Numeric,
}

impl ErrorCategory {
    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCategory::Config => "config",
            ErrorCategory::Input => "input",
            ErrorCategory::Numeric => "numeric",
        }
    }

    /// Process exit status for a failure of this kind.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCategory::Config => 2,
            ErrorCategory::Input => 3,
            ErrorCategory::Numeric => 4,
        }
    }
}

impl Error {
    pub fn category(&self) -> ErrorCategory {
        match self {
            Error::Config(_) => ErrorCategory::Config,
            Error::Numeric(_) => ErrorCategory::Numeric,
            Error::Input(_) | Error::Format(_) | Error::Parse { .. } | Error::Io { .. } => {
                ErrorCategory::Input
            }
            Error::Graph(e) => match e {
                replayscope_autodiff::Error::State(_) => ErrorCategory::Numeric,
                _ => ErrorCategory::Input,
            },
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
