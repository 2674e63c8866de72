use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// An argument violated an operation's precondition.
    #[error("input domain error: {0}")]
    InputDomain(String),

    /// An iterative method did not reach its tolerance.
    #[error("numeric error: {message} (residual {residual:e})")]
    Numeric { message: String, residual: f64 },

    /// A computed quantity left the representable range.
    #[error("overflow: {0}")]
    Overflow(String),

    /// An integrand description is malformed.
    #[error("invalid integrand: {0}")]
    Validation(String),

    /// A simulated path produced non-finite state.
    #[error("path blow-up at step {step}: {reason}")]
    PathBlowUp { step: usize, reason: String },

    /// Batch-level failure (exclusions, empty batches).
    #[error("batch error: {0}")]
    Batch(String),

    /// Configuration text could not be turned into an experiment.
    #[error("config error at {location}: key `{key}`: {message}")]
    Config {
        key: String,
        location: String,
        message: String,
    },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::InputDomain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
