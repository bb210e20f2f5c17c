//! Error type shared by every module of the crate.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    /// A coordinate or index fell outside its valid range.
    #[error("index out of range: {0}")]
    Index(String),

    /// An argument violated a mathematical precondition.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed, truncated or corrupt bitstream.
    #[error("format error at byte {offset}: {reason}")]
    Format { offset: usize, reason: String },

    #[error("aggregation error: {0}")]
    Aggregation(String),

    /// A device (or a whole scenario) cannot meet its deadline.
    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("fit error: {0}")]
    Fit(String),

    /// Configuration problem; `key` names the offending setting.
    #[error("config error for `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error("training diverged at round {round}: loss {loss} exceeds 10x initial loss {initial}")]
    Divergence { round: usize, loss: f64, initial: f64 },

    #[error("i/o error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn format(offset: usize, reason: impl Into<String>) -> Self {
        Error::Format {
            offset,
            reason: reason.into(),
        }
    }

    pub(crate) fn config(key: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
