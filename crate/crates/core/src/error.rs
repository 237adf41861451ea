use thiserror::Error;

/// Errors raised by the library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch on axis `{axis}`: expected {expected}, found {found}")]
    Shape {
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid tensor: {0}")]
    Tensor(String),

    #[error("invalid box: {0}")]
    InvalidBox(String),

    #[error("covariance is not positive definite: {condition}")]
    NotPositiveDefinite { condition: String },

    #[error("non-positive LGBB entry `{name}` = {value}")]
    NonPositiveEntry { name: &'static str, value: f64 },

    #[error("representation kind mismatch: {left} vs {right}")]
    KindMismatch { left: String, right: String },

    #[error("unknown kind `{0}`")]
    UnknownKind(String),

    #[error("invalid config field `{field}`: {reason}")]
    Config { field: String, reason: String },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn not_pd(condition: impl Into<String>) -> Self {
        Error::NotPositiveDefinite {
            condition: condition.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Decode(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
