use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },

    #[error("invalid mask: row {row} has no allowed entry")]
    InvalidMask { row: usize },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("index {index} out of range for table `{table}` with {rows} rows")]
    Lookup {
        table: String,
        index: usize,
        rows: usize,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("data error: {0}")]
    Data(String),

    #[error("incompatible artifact: {0}")]
    Compatibility(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),

    #[error("training diverged at epoch {epoch}: loss is not finite")]
    Diverged {
        epoch: usize,
        /// Parameters of the last epoch that finished with a finite loss.
        last_good: Option<Box<crate::model::ModelParams<f32>>>,
    },

    #[error("{path}: {source}")]
    File {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Short machine-parsable category, stable across releases.
    pub fn category(&self) -> &'static str {
        match self {
            Error::Dimension { .. } | Error::InvalidMask { .. } | Error::Contract(_) => "contract",
            Error::Lookup { .. } => "lookup",
            Error::Schema(_) => "schema",
            Error::Config(_) => "config",
            Error::Data(_) => "data",
            Error::Compatibility(_) => "compatibility",
            Error::UndefinedMetric(_) => "metric",
            Error::NonFiniteGradient(_) | Error::Diverged { .. } => "diverged",
            Error::File { .. } | Error::Io(_) | Error::Csv(_) => "io",
        }
    }

    pub(crate) fn file(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::File {
            path: path.into(),
            source,
        }
    }
}
