use std::io;

use thiserror::Error;

/// Errors produced by the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid dimension: {0}")]
    InvalidDimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    Convergence { iterations: usize, residual: f64 },

    #[error(
        "layer {layer} neuron {neuron} has pre-activation {value:e}, within {required:e} of the ReLU kink"
    )]
    KinkProximity {
        layer: usize,
        neuron: usize,
        value: f64,
        required: f64,
    },

    #[error("column subset of size {subset} cannot span {rows} rows")]
    RankDeficient { subset: usize, rows: usize },

    #[error("fraction c1 = {c1} gives subsets of size {subset_size}, fewer than the {rows} rows")]
    InvalidFraction {
        c1: f64,
        subset_size: usize,
        rows: usize,
    },

    #[error("IDX format error: {0}")]
    Format(String),

    #[error("truncated data: expected {expected} bytes, found {actual}")]
    Length { expected: usize, actual: usize },

    #[error("inconsistent data: {0}")]
    Consistency(String),

    #[error("digit label {0} outside 0..=9")]
    InvalidLabel(u8),

    #[error("example {0} has zero norm")]
    DegenerateExample(usize),

    #[error("rejection sampling gave up after {attempts} attempts")]
    SamplingFailure { attempts: usize },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    TrainingDivergence { epoch: usize },

    #[error("experiment spec error: {0}")]
    Spec(String),

    #[error("data missing: {0}")]
    DataMissing(String),

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// Whether the error stems from input data (files, datasets) rather than
    /// from the experiment description or the numerics.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Format(_)
                | Error::Length { .. }
                | Error::Consistency(_)
                | Error::InvalidLabel(_)
                | Error::DegenerateExample(_)
                | Error::DataMissing(_)
                | Error::Io(_)
        )
    }

    pub fn is_spec_error(&self) -> bool {
        matches!(
            self,
            Error::Spec(_) | Error::Json(_) | Error::InvalidFraction { .. } | Error::InvalidDimension(_)
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
