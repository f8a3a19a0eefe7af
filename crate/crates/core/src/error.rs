use thiserror::Error;

/// Library-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// A parameter or input violates a documented invariant.
    #[error("invalid {field}: {msg}")]
    InvalidInput { field: &'static str, msg: String },

    /// Bad configuration file or CLI arguments.
    #[error("configuration error: {0}")]
    Config(String),

    /// Numerical failure (non-PSD covariance, integration blow-up, ...).
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Inference cannot proceed (degenerate filter at the starting point,
    /// zero-variance chain, ...).
    #[error("degenerate inference: {0}")]
    Degenerate(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: &'static str, msg: impl Into<String>) -> Self {
        Error::InvalidInput {
            field,
            msg: msg.into(),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 numerical, 4 degenerate.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::InvalidInput { .. } => 2,
            Error::Numerical(_) => 3,
            Error::Degenerate(_) => 4,
            _ => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
