use thiserror::Error;

pub type Result<T> = std::result::Result<T, AdisError>;

#[derive(Debug, Error)]
pub enum AdisError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("mask undersampled: resolution {have} < required {required} samples per side")]
    Sampling { have: usize, required: usize },

    #[error("kernel side {have} too small; need at least {required}")]
    Sizing { have: usize, required: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("non-finite value at {location}")]
    Numeric { location: String },

    #[error("degenerate operator: {0}")]
    Degenerate(String),

    #[error("data error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl AdisError {
    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            AdisError::Parameter(_)
            | AdisError::Sampling { .. }
            | AdisError::Sizing { .. }
            | AdisError::Precondition(_) => 2,
            AdisError::Numeric { .. } | AdisError::Degenerate(_) => 4,
            AdisError::Json(e) if e.is_syntax() || e.is_data() => 2,
            _ => 3,
        }
    }
}

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AdisError::Dimension(msg.into()))
}

pub(crate) fn param_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(AdisError::Parameter(msg.into()))
}
