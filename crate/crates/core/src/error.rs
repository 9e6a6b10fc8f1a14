use thiserror::Error;

/// Errors raised by the library.
///
/// The split between refusals and violations matters to callers: a refusal
/// means the request was outside what the tool agrees to compute (bad input,
/// exhausted budget), while a violation means an identity or inequality that
/// must hold was observed to fail.
#[derive(Debug, Error)]
pub enum OzError {
    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("budget exceeded: {what} needs ~{needed} units, cap is {cap}")]
    Budget { what: String, needed: u128, cap: u128 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("identity violated: {0}")]
    Violation(String),

    #[error("did not converge: {0}")]
    NoConvergence(String),

    #[error("schema error in {field}: {message}")]
    Schema { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl OzError {
    pub fn precondition(msg: impl Into<String>) -> Self {
        OzError::Precondition(msg.into())
    }

    pub fn violation(msg: impl Into<String>) -> Self {
        OzError::Violation(msg.into())
    }

    /// True for errors that mean "refused to compute" rather than "computed and found wrong".
    pub fn is_refusal(&self) -> bool {
        matches!(
            self,
            OzError::Precondition(_)
                | OzError::Budget { .. }
                | OzError::Unsupported(_)
                | OzError::Schema { .. }
                | OzError::NoConvergence(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, OzError>;
