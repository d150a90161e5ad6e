use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot access {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed header in {path}: {reason}")]
    InvalidHeader { path: PathBuf, reason: String },

    #[error("unsupported voxel datatype {0}")]
    UnsupportedDatatype(String),

    #[error("payload size mismatch: header declares {expected} bytes, found {actual}")]
    SizeMismatch { expected: usize, actual: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index {index:?} outside [0, {limit})")]
    IndexOutOfRange { index: [usize; 3], limit: usize },

    /// No fixed voxel maps inside the moving volume.
    #[error("empty overlap between fixed and moving volumes")]
    EmptyOverlap,

    #[error("singular metric: denominator {0:e} too close to zero")]
    SingularMetric(f64),

    #[error("probabilities must be nonnegative and sum to 1 (sum = {0})")]
    NotNormalized(f64),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
