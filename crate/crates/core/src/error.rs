use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension {0}: must be at least 1")]
    InvalidDimension(usize),

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("coincident source and field points: force is singular")]
    Singularity,

    #[error("non-finite force on particle {particle}")]
    ForceAssembly { particle: usize },

    #[error("iteration {iteration}: {source}")]
    Iteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("integrator: {0}")]
    Integrator(String),

    #[error("mesh: {0}")]
    Mesh(String),

    #[error("negative or non-finite charge magnitude {value} at grid point {index}")]
    Positivity { index: usize, value: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error("summary: {0}")]
    Summary(String),

    #[error("metric: {0}")]
    Metric(String),

    #[error("target `{target}` does not provide {what}")]
    Unsupported { target: String, what: &'static str },

    #[error("data: {0}")]
    Data(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn at_iteration(self, iteration: usize) -> Self {
        Error::Iteration {
            iteration,
            source: Box::new(self),
        }
    }
}
