use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum CaeError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("data format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("numeric failure: {0}")]
    Numeric(String),
}

pub type Result<T> = std::result::Result<T, CaeError>;

impl CaeError {
    /// Process exit code for the CLI: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            CaeError::ShapeMismatch(_) | CaeError::Geometry(_) | CaeError::InvalidArgument(_) => 1,
            CaeError::Format(_) | CaeError::Io(_) => 2,
            CaeError::Numeric(_) => 3,
        }
    }
}
