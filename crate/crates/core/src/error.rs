use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, NaeError>;

#[derive(Debug, Error)]
pub enum NaeError {
    /// Shapes, counts or hyperparameters that cannot describe a valid model or run.
    #[error("configuration error: {0}")]
    Config(String),

    /// A call that is well-typed but not meaningful (e.g. interaction of a feature with itself).
    #[error("usage error: {0}")]
    Usage(String),

    /// A NaN or infinity appeared in the named stage of a computation.
    #[error("numerical divergence in {stage}")]
    Numerical { stage: String },

    #[error("training diverged at epoch {epoch}, step {step}: {source}")]
    Diverged {
        epoch: usize,
        step: usize,
        #[source]
        source: Box<NaeError>,
    },

    #[error("data error: {0}")]
    Data(String),

    /// A theoretical construction could not be realized with the given inputs.
    #[error("construction error: {0}")]
    Construction(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl NaeError {
    pub fn config(msg: impl Into<String>) -> Self {
        NaeError::Config(msg.into())
    }

    pub fn usage(msg: impl Into<String>) -> Self {
        NaeError::Usage(msg.into())
    }

    pub fn numerical(stage: impl Into<String>) -> Self {
        NaeError::Numerical {
            stage: stage.into(),
        }
    }

    pub fn data(msg: impl Into<String>) -> Self {
        NaeError::Data(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NaeError::Io {
            path: path.into(),
            source,
        }
    }
}
