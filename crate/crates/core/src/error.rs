use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("unbalanced panel: {} missing unit-year cell(s), first: unit={} year={}", missing.len(), missing[0].0, missing[0].1)]
    UnbalancedPanel { missing: Vec<(String, i32)> },

    #[error("invalid value in row {row}: {message}")]
    InvalidValue { row: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("cannot treat {k} of {n} units")]
    KTooLarge { k: usize, n: usize },

    #[error("enactment window infeasible: {0}")]
    InfeasibleWindow(String),

    #[error("no exposure defined for treated unit {0}")]
    MissingExposure(String),

    #[error("panel has too few years ({0}) for this model")]
    TooFewYears(usize),

    #[error("design matrix is rank deficient (reciprocal condition {rcond:.3e})")]
    RankDeficient { rcond: f64 },

    #[error("cluster-robust covariance needs at least 2 clusters, got {0}")]
    TooFewClusters(usize),

    #[error("no replication records to summarize")]
    EmptyInput,

    #[error("records carry differing truth values ({0} vs {1})")]
    MixedTruths(f64, f64),

    #[error("replication failure rate {rate:.3} exceeds abort threshold {threshold:.3}")]
    AbortThreshold { rate: f64, threshold: f64 },

    #[error("results file is missing required scenario cells: {}", .0.join("; "))]
    MissingCells(Vec<String>),

    #[error("unknown figure id `{0}`")]
    UnknownFigure(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
