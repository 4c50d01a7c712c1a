//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. Variants are grouped by what
//! the caller can do about them: fix the arguments ([`Error::Invalid`],
//! [`Error::Dimension`]), fix the data or rerun ([`Error::Numerical`],
//! [`Error::Divergence`]), or fix the environment ([`Error::Io`],
//! [`Error::Format`]).

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Arguments violate a documented precondition.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// Shapes that must agree do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// A factorization or solve failed (singular or indefinite matrix).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Training produced a non-finite loss or parameter.
    #[error("training diverged: {0}")]
    Divergence(String),

    /// Euler integration left the chart where the attitude map is invertible.
    #[error("gimbal lock: |cos(pitch)| = {0:.3e} below tolerance")]
    GimbalLock(f64),

    /// Filesystem problem, annotated with the path involved.
    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A file parsed but does not describe what it claims to.
    #[error("format error in {path}: {message}")]
    Format { path: String, message: String },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn dimension(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn format(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: message.into(),
        }
    }
}
