use thiserror::Error;

/// Failure raised by an image operator.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OpError {
    #[error("bad parameter: {0}")]
    BadParam(String),
    #[error("input is not a binary mask")]
    NotBinary,
    #[error("dimension mismatch: {0}")]
    DimMismatch(String),
    #[error("histogram has a single populated bin")]
    DegenerateHistogram,
    #[error("image too small: {0}")]
    TooSmall(String),
    #[error("bad dimensions: {0}")]
    BadDims(String),
    #[error("coordinate out of bounds: {0}")]
    OutOfBounds(String),
    #[error("no markers given")]
    NoMarkers,
}

impl OpError {
    /// Stable variant name, surfaced by the service and CLI.
    pub fn name(&self) -> &'static str {
        match self {
            OpError::BadParam(_) => "BadParam",
            OpError::NotBinary => "NotBinary",
            OpError::DimMismatch(_) => "DimMismatch",
            OpError::DegenerateHistogram => "DegenerateHistogram",
            OpError::TooSmall(_) => "TooSmall",
            OpError::BadDims(_) => "BadDims",
            OpError::OutOfBounds(_) => "OutOfBounds",
            OpError::NoMarkers => "NoMarkers",
        }
    }
}

pub type OpResult<T> = Result<T, OpError>;

pub(crate) fn bad_param(msg: impl Into<String>) -> OpError {
    OpError::BadParam(msg.into())
}
