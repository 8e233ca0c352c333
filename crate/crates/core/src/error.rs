use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SvlfError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SvlfError {
    #[error("empty occupancy")]
    EmptyOccupancy,
    #[error("invalid grid config: {0}")]
    InvalidGrid(String),
    #[error("unknown voxel id {0}")]
    UnknownVoxel(u64),
    #[error("point not in voxel")]
    PointNotInVoxel,
    #[error("tangent ray")]
    TangentRay,
    #[error("non-finite input to {0}")]
    NonFinite(&'static str),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("missing activation cache")]
    MissingCache,
    #[error("negative optical thickness {0}")]
    NegativeThickness(f64),
    #[error("surface point outside voxel")]
    SurfaceOutsideVoxel,
    #[error("image too small: {0}")]
    ImageTooSmall(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("invalid checkpoint: {0}")]
    InvalidCheckpoint(String),
    #[error("training diverged at stage {stage}, epoch {epoch}; diagnostic checkpoint at {checkpoint}")]
    Diverged {
        stage: usize,
        epoch: usize,
        checkpoint: PathBuf,
    },
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("image codec error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
    #[error("json error on {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl SvlfError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SvlfError::Io {
            path: path.into(),
            source,
        }
    }
}
