use std::path::PathBuf;

use crate::neural::LossTerms;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("non-finite value for {what}: {value}")]
    NonFinite { what: &'static str, value: f64 },

    #[error("{what} out of domain: {value} ({reason})")]
    Domain { what: &'static str, value: f64, reason: &'static str },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape { context: &'static str, expected: String, got: String },

    #[error("tape has already been consumed by a backward pass")]
    TapeConsumed,

    #[error("tape was recorded against different parameters (version {tape} vs model {model})")]
    TapeStale { tape: u64, model: u64 },

    #[error("quadrature did not converge on [{lo}, {hi}]: error estimate {estimate:e} > tolerance {tolerance:e} after {intervals} intervals")]
    NonConvergence { lo: f64, hi: f64, estimate: f64, tolerance: f64, intervals: usize },

    #[error("training aborted at epoch {epoch}, batch {batch}: non-finite {stage} (loss terms: {terms})")]
    TrainingAborted { epoch: usize, batch: usize, stage: &'static str, terms: LossTerms },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("file not found: {}", .0.display())]
    MissingFile(PathBuf),

    #[error("line {line}, column `{column}`: cannot parse {value:?} as a number")]
    MalformedCell { line: u64, column: String, value: String },

    #[error("line {line}: expected {expected} fields, found {found}")]
    RaggedRow { line: u64, expected: usize, found: usize },

    #[error("unknown column `{0}`")]
    UnknownColumn(String),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("empty {0}")]
    Empty(&'static str),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("io error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error("run {run} (seed {seed}) failed: {source}")]
    Run {
        run: usize,
        seed: u64,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// The innermost error, looking through run wrappers.
    pub fn root(&self) -> &Error {
        match self {
            Error::Run { source, .. } => source.root(),
            other => other,
        }
    }
}

pub(crate) fn ensure_finite(what: &'static str, value: f64) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite { what, value })
    }
}

pub(crate) fn ensure_positive(what: &'static str, value: f64) -> Result<f64> {
    ensure_finite(what, value)?;
    if value > 0.0 {
        Ok(value)
    } else {
        Err(Error::Domain { what, value, reason: "must be > 0" })
    }
}
