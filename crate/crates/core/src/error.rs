//! Error type shared by all modules.

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Failures surfaced by the numeric core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A dimension did not match the contract of the call.
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: String,
        expected: usize,
        got: usize,
    },

    /// An argument or configuration value is outside its valid domain.
    #[error("invalid argument: {0}")]
    Invalid(String),

    /// A non-finite value appeared where the computation cannot continue.
    /// `index` identifies the step, node, or layer that produced it.
    #[error("non-finite value in {context} at index {index}")]
    NonFinite { context: String, index: usize },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("toml error: {0}")]
    Toml(String),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub fn shape(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Shape {
            context: context.into(),
            expected,
            got,
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn non_finite(context: impl Into<String>, index: usize) -> Self {
        Error::NonFinite {
            context: context.into(),
            index,
        }
    }
}
