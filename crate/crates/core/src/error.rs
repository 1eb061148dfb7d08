use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("point ({lat}, {lon}) is outside region `{region}`")]
    OutOfRegion { region: String, lat: f64, lon: f64 },

    #[error("invalid region: {0}")]
    InvalidRegion(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("schema error: {0}")]
    Schema(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("degenerate training data: {0}")]
    DegenerateTraining(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("ambiguous idling coverage at ({lat}, {lon}): {count} boxes contain the point")]
    AmbiguousCoverage { lat: f64, lon: f64, count: usize },

    #[error("feature manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
