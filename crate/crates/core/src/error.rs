use thiserror::Error;

/// Errors produced by the segmentation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("RLE counts sum to {sum} but the mask has {expected} pixels")]
    SumMismatch { sum: usize, expected: usize },

    #[error("category `{0}` has no embedding entry")]
    MissingCategory(String),

    #[error("index {index} out of range for length {len}")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("box is empty")]
    EmptyBox,

    #[error("box ({x0},{y0})-({x1},{y1}) exceeds image bounds {height}x{width}")]
    BoxOutOfBounds {
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        height: usize,
        width: usize,
    },

    #[error("ground truth lacks {field} required by a nonzero {weight} weight")]
    MissingSupervision {
        field: &'static str,
        weight: &'static str,
    },

    #[error("{predictions} prediction entries cannot cover {segments} ground-truth segments")]
    TooFewPredictions { predictions: usize, segments: usize },

    #[error("operation requires task `{expected}`, dataset declares `{got}`")]
    WrongTask { expected: String, got: String },

    #[error("category vocabulary mismatch: {0}")]
    VocabularyMismatch(String),

    #[error("ground-truth masks are required for mask AP evaluation")]
    MissingGtMasks,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("invalid dataset spec `{name}`: {reason}")]
    InvalidSpec { name: String, reason: String },

    #[error("parse error: {0}")]
    Parse(#[from] serde_json::Error),

    #[error("validation failed:\n{}", .0.join("\n"))]
    Validation(Vec<String>),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
