use std::path::PathBuf;

/// Errors produced anywhere in the segmentation pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("component {component} is degenerate: effective weight {weight:.3e} below {threshold:.3e}")]
    DegenerateComponent {
        component: usize,
        weight: f64,
        threshold: f64,
    },

    #[error("pyramid level {level} would have dims {dims:?}; every dim must stay >= 2")]
    TooManyLevels { level: usize, dims: [usize; 3] },

    #[error("format error: {0}")]
    Format(String),

    #[error("non-finite loss at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("degenerate neighborhood around landmark {landmark}")]
    DegenerateNeighborhood { landmark: usize },

    #[error("profile model has {model} levels but pyramid has {pyramid}")]
    LevelMismatch { model: usize, pyramid: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("mesh is not watertight: ray at (y={y}, z={z}) crosses {crossings} times")]
    NonWatertight { y: usize, z: usize, crossings: usize },

    #[error("profile training failed at level {level}, landmark {landmark}: {source}")]
    ProfileTraining {
        level: usize,
        landmark: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

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
}
