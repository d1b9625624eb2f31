use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("incompatible dimensions: expected {expected:?}, found {found:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },

    #[error("buffer of length {len} does not match a {width}x{height} grid")]
    BufferLength {
        width: usize,
        height: usize,
        len: usize,
    },

    #[error("field dimensions must be positive, got {width}x{height}")]
    EmptyGrid { width: usize, height: usize },

    #[error("non-finite flow component at pixel ({x}, {y})")]
    NonFinite { x: usize, y: usize },

    #[error("mask value {value} at index {index} is not binary")]
    NonBinaryMask { index: usize, value: u8 },

    #[error("invalid histogram bin edges: {0}")]
    BinEdges(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("accumulation needs at least 3 frames, got {0}")]
    SequenceTooShort(usize),

    #[error("sequence is inconsistent: {0}")]
    InvalidSequence(String),

    #[error("consistency detection requires backward local flows")]
    MissingBackwardFlows,

    #[error("no occlusion mask for frame pair ({reference}, {target})")]
    MissingMask { reference: usize, target: usize },

    #[error("no flow for frame pair ({reference}, {target})")]
    MissingFlow { reference: usize, target: usize },

    #[error("extrapolation step count must be at least 1, got {0}")]
    InvalidStepCount(usize),

    #[error("every pixel is occluded; nothing to fill from")]
    NoVisiblePixels,

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("malformed .flo data: {0}")]
    MalformedFlo(String),

    #[error("invalid dataset at {path}: {reason}")]
    Dataset { path: PathBuf, reason: String },

    #[error("empty report list")]
    EmptyReports,

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Image(#[from] image::ImageError),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
