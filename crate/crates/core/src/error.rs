use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("pcd parse error at line {line}: {msg}")]
    Pcd { line: usize, msg: String },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("clouds share view id {0}")]
    OverlappingViews(u32),

    #[error("empty point cloud")]
    EmptyCloud,

    #[error("neighborhood has {0} points, at least 10 are required")]
    TooFewPoints(usize),

    #[error("degenerate neighborhood: {0}")]
    Degenerate(&'static str),

    #[error("cloud has no normals")]
    MissingNormals,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("training data contains a single class")]
    SingleClass,

    #[error("cannot split into {folds} folds: smallest class has {smallest} rows")]
    TooManyFolds { folds: usize, smallest: usize },

    #[error("scene placement failed after {0} attempts")]
    PlacementFailed(usize),

    #[error("unsupported model format: {0}")]
    Model(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
