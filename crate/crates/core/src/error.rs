use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("frame {got} follows frame {previous}; frame indices must strictly increase")]
    StreamOrder { previous: u64, got: u64 },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unknown category id {0}")]
    UnknownClass(i64),

    #[error("metric undefined: {0}")]
    UndefinedMetric(String),

    #[error(
        "calibration failed: target {target} not reachable; rate({lo_cv})={lo_rate}, rate({hi_cv})={hi_rate}"
    )]
    Calibration {
        target: f64,
        lo_cv: f64,
        lo_rate: f64,
        hi_cv: f64,
        hi_rate: f64,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
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
