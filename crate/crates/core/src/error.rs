use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the domain where an operation is defined.
    #[error("domain error: {0}")]
    Domain(String),

    /// Malformed or inconsistent user-supplied data (kernel specs, measures, flags).
    #[error("validation error: {0}")]
    Validation(String),

    /// An enumeration or search exceeded its configured budget.
    #[error("resource budget exceeded: {0}")]
    Resource(String),

    /// Conditioned sampling ran out of retries.
    #[error("exhausted after {attempts} rejected samples (target size {target})")]
    Exhausted { attempts: u64, target: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
