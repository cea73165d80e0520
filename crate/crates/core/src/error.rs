use thiserror::Error;

/// Errors produced by estimators, the simulation harness and file I/O.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("invalid parameter: {0}")]
    Parameter(String),

    /// A network or optimizer was used against state it does not match.
    #[error("usage error: {0}")]
    Usage(String),

    /// Training produced a non-finite quantity.
    #[error("training failed at step {step}: {message}")]
    Training { step: u64, message: String },

    /// A malformed line in a trace, metrics or config file.
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    /// Prefixes a training error's message, leaving other variants untouched.
    pub(crate) fn context(self, prefix: impl std::fmt::Display) -> Self {
        match self {
            Error::Training { step, message } => Error::Training {
                step,
                message: format!("{prefix}: {message}"),
            },
            other => other,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
