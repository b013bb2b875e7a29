use thiserror::Error;

#[derive(Debug, Error)]
pub enum WrfError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid geometry: {0}")]
    Geometry(String),

    #[error("no propagation path reaches the receiver")]
    NoCoverage,

    #[error("channel is zero on element {0}; phase undefined")]
    DegenerateChannel(usize),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("format error: {0}")]
    Format(String),

    #[error("manifest hash mismatch: expected {expected}, found {found}")]
    HashMismatch { expected: String, found: String },

    #[error("model is missing its calibration")]
    Uncalibrated,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = WrfError> = std::result::Result<T, E>;
