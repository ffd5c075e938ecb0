use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed problem or configuration.
    #[error("specification error: {0}")]
    Spec(String),

    /// A standing assumption of the problem class is violated.
    #[error("assumption violated ({condition}): {detail}")]
    Assumption { condition: String, detail: String },

    #[error("degeneracy: {0}")]
    Degeneracy(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Input is valid but outside what the construction supports.
    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit status for the command-line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Spec(_) | Error::Json(_) => 2,
            Error::Assumption { .. } => 3,
            Error::Degeneracy(_) | Error::Numerical(_) | Error::Unsupported(_) => 4,
            Error::Io(_) => 5,
        }
    }

    pub(crate) fn spec(msg: impl Into<String>) -> Self {
        Error::Spec(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
