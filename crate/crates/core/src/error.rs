use std::path::PathBuf;

/// Errors raised by the detection pipeline.
#[derive(thiserror::Error, Debug)]
pub enum Error {
    #[error("invalid dimensions {height}x{width}: {reason}")]
    InvalidDimensions {
        height: usize,
        width: usize,
        reason: String,
    },

    #[error("coverage outside [{min}, {max}] after {attempts} attempts (last {last:.4})")]
    CoverageUnsatisfiable {
        min: f64,
        max: f64,
        attempts: usize,
        last: f64,
    },

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("image {height}x{width} is too small, need at least {min}x{min}")]
    ImageTooSmall {
        height: usize,
        width: usize,
        min: usize,
    },

    #[error("input {height}x{width} must be divisible by 8 and at least 32 on each side")]
    BadInputSize { height: usize, width: usize },

    #[error("invalid detector configuration: {0}")]
    ConfigInvalid(String),

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("no inputs to evaluate")]
    EmptyInput,

    #[error("training diverged at step {step}: {what} is not finite")]
    DivergenceDetected { step: usize, what: String },

    #[error("checkpoint {0}")]
    Checkpoint(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: image::ImageError,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Torch(#[from] tch::TchError),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn image(path: impl Into<PathBuf>, source: image::ImageError) -> Self {
        Error::Image {
            path: path.into(),
            source,
        }
    }

    /// True for failures of the filesystem or of file decoding, as opposed to
    /// invalid inputs or configurations.
    pub fn is_io(&self) -> bool {
        matches!(self, Error::Io { .. } | Error::Image { .. })
    }
}

pub type Result<T> = std::result::Result<T, Error>;
