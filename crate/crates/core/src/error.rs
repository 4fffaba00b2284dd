use thiserror::Error;

/// Errors raised anywhere in the pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("insufficient data for {what}: need at least {needed}, got {got}")]
    InsufficientData {
        what: String,
        needed: usize,
        got: usize,
    },

    #[error("boundary error: {0}")]
    Boundary(String),

    #[error("index out of range: {0}")]
    Range(String),

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    ShapeMismatch {
        context: String,
        expected: usize,
        got: usize,
    },

    #[error("undersampled window: {samples} samples for an alphabet needing {required}")]
    Undersampled { samples: usize, required: usize },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("stage ordering: {0}")]
    Ordering(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("checksum mismatch in {0}")]
    Checksum(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub fn insufficient(what: impl Into<String>, needed: usize, got: usize) -> Self {
        Error::InsufficientData {
            what: what.into(),
            needed,
            got,
        }
    }

    pub fn shape(context: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::ShapeMismatch {
            context: context.into(),
            expected,
            got,
        }
    }

    /// Short machine-readable tag for the error family.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidInput(_) => "invalid_input",
            Error::Validation(_) => "validation",
            Error::InsufficientData { .. } => "insufficient_data",
            Error::Boundary(_) => "boundary",
            Error::Range(_) => "range",
            Error::ShapeMismatch { .. } => "shape_mismatch",
            Error::Undersampled { .. } => "undersampled",
            Error::Numeric(_) => "numeric",
            Error::Ordering(_) => "ordering",
            Error::Parse(_) => "parse",
            Error::Checksum(_) => "checksum",
            Error::Io(_) => "io",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
