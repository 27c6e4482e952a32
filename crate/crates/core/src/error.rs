use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("voxel index {index:?} out of bounds for grid dims {dims:?}")]
    OutOfBounds { index: [usize; 3], dims: [usize; 3] },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error("missing pose for frame {frame_id}")]
    MissingPose { frame_id: u32 },

    #[error("missing data: {0}")]
    MissingData(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("loss is undefined: {0}")]
    UndefinedLoss(&'static str),

    #[error(
        "active chunk limit of {limit} exceeded ({requested} chunks needed); \
         configure a spill directory or use a smaller chunk cache per batch"
    )]
    ActiveChunkLimit { limit: usize, requested: usize },

    #[error("internal error: {0}")]
    Internal(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// True for errors caused by reading or parsing external data.
    pub fn is_io_or_format(&self) -> bool {
        matches!(
            self,
            Error::Io(_) | Error::Format { .. } | Error::MissingPose { .. } | Error::MissingData(_)
        )
    }
}
