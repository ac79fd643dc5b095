use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A law, configuration or argument failed validation. `field` names the
    /// offending parameter.
    #[error("invalid {field}: {message}")]
    Invalid { field: String, message: String },

    #[error("population overflow at generation {generation}: {detail}")]
    Overflow { generation: usize, detail: String },

    #[error("infeasible run: {0}")]
    Infeasible(String),

    #[error("index {index} is beyond n_max = {n_max}")]
    IndexBeyondHorizon { index: i64, n_max: u32 },

    #[error("{value} is outside the tabulated range [{lo}, {hi}]")]
    OutOfRange { value: f64, lo: f64, hi: f64 },

    #[error("h_n is not monotone in n at x = {x} (n = {n}): {detail}")]
    NonMonotone { x: f64, n: usize, detail: String },

    #[error("no convergence within {iterations} iterations (last gap {gap:e})")]
    NoConvergence { iterations: usize, gap: f64 },

    #[error("empty sample")]
    EmptySample,

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn invalid(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
