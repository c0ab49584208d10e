use thiserror::Error;

use crate::geometry::BBox;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box {0:?}")]
    InvalidBox(BBox),

    #[error("invalid ground truth box {0:?}: width and height must be positive")]
    InvalidGroundTruth(BBox),

    #[error("anchor {0:?} has non-positive size")]
    DegenerateAnchor(BBox),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("level mismatch: {0}")]
    LevelMismatch(String),

    #[error("no usable face to sample from")]
    NoFaces,

    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unknown image {0:?}")]
    UnknownImage(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(line: usize, msg: impl Into<String>) -> Self {
        Error::Parse { line, msg: msg.into() }
    }
}
