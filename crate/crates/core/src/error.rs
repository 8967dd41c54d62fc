use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("pose shape mismatch: {0}")]
    PoseShape(String),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("skeleton correspondence failure: {0}")]
    SkeletonCorrespondence(String),

    #[error("degenerate bone `{0}` has zero length")]
    DegenerateBone(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid rig binding: {0}")]
    RigBinding(String),

    #[error("invalid skin weights: {0}")]
    InvalidWeights(String),

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid character spec: {0}")]
    InvalidSpec(String),

    #[error("invalid camera: {0}")]
    Camera(String),

    #[error("asset error: {0}")]
    Asset(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error in {path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("image error on {path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// Whether the failure stems from bad user input rather than a runtime fault.
    ///
    /// The CLI maps these to exit code 2 and everything else to 3. A missing
    /// file counts as bad input.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Io { source, .. } => source.kind() == std::io::ErrorKind::NotFound,
            Error::Image { .. } => false,
            _ => true,
        }
    }
}
