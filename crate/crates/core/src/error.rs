use thiserror::Error;

/// Errors produced by the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// Malformed or non-finite input data.
    #[error("input error: {0}")]
    Input(String),

    /// A parameter outside its admissible range.
    #[error("parameter error: {0}")]
    Parameter(String),

    /// The requested case is not supported (e.g. testing the last step).
    #[error("unsupported: {0}")]
    Unsupported(String),

    /// A degenerate configuration for which the estimate is undefined.
    #[error("degenerate input: {0}")]
    Degenerate(String),

    /// An iterative numerical routine failed to meet its tolerance.
    #[error("numerical error: {message} (best estimate {estimate}, achieved tolerance {achieved:e})")]
    Numerical {
        message: String,
        estimate: f64,
        achieved: f64,
    },

    /// An internal consistency check failed.
    #[error("internal consistency error: {0}")]
    Internal(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::Parameter(msg.into())
    }

    pub(crate) fn input(msg: impl Into<String>) -> Self {
        Error::Input(msg.into())
    }

    /// True for errors raised by a numerical routine rather than by bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Numerical { .. } | Error::Internal(_))
    }
}
