use thiserror::Error;

/// Errors surfaced by the loss, training, and evaluation pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },

    #[error("row {row} has zero or non-finite norm")]
    BadNorm { row: usize },

    #[error("prototype row {row} is not unit-norm (|w| = {norm})")]
    NotUnitNorm { row: usize, norm: f64 },

    #[error("label {label} at row {row} out of range for {num_classes} classes")]
    LabelOutOfRange {
        row: usize,
        label: usize,
        num_classes: usize,
    },

    #[error("non-finite {what} at sample {sample}")]
    NonFinite { what: &'static str, sample: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("empty input: {0}")]
    EmptyInput(&'static str),

    #[error(
        "FAR target {target:e} unattainable with {non_mated} non-mated pairs \
         (smallest measurable rate is {min:e})"
    )]
    UnattainableFar {
        target: f64,
        non_mated: usize,
        min: f64,
    },

    #[error("epoch {epoch}, batch {batch}: {source}")]
    TrainStep {
        epoch: usize,
        batch: usize,
        source: Box<Error>,
    },

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("malformed file: {0}")]
    Format(String),
}

pub type Result<T> = std::result::Result<T, Error>;
