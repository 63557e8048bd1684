//! Crate-wide error type.

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// Input data violated a precondition (lengths, ordering, positivity, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A CSV row could not be parsed; `line` is 1-based and counts the header.
    #[error("csv parse error at line {line}: {message}")]
    Csv { line: usize, message: String },

    /// A numerical routine failed (factorization, non-finite intermediate, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Hyperparameter estimation could not produce a usable optimum.
    #[error("estimation failed: {0}")]
    Estimation(String),

    /// Model fitting (GARCH maximum likelihood) could not produce a usable fit.
    #[error("fit failed: {0}")]
    FitFailed(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }
}
