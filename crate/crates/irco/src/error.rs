//! Crate-wide error type.

use thiserror::Error;

use crate::metrics::RateKind;

#[derive(Debug, Error)]
pub enum IrcoError {
    #[error("empty batch: {context} needs at least one example")]
    EmptyBatch { context: &'static str },

    #[error("undefined rate: {kind} has an empty denominator population ({needs})")]
    UndefinedRate { kind: RateKind, needs: &'static str },

    #[error("non-monotone rate: {kind} is not monotone in the threshold and cannot be solved for one")]
    NonMonotoneRate { kind: RateKind },

    #[error("degenerate denominator: |{what}| = {value:.3e} is below the {floor:.1e} floor")]
    DegenerateDenominator {
        what: &'static str,
        value: f64,
        floor: f64,
    },

    #[error(
        "degenerate constraint slope: constraint {index} has |dg/dlambda| = {slope:.3e} (floor 1e-10); \
         the smoothed rate is flat at the current threshold"
    )]
    DegenerateConstraintSlope { index: usize, slope: f64 },

    #[error("divergence: non-finite {what} at step {step}")]
    Divergence { what: &'static str, step: usize },

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("single-class batch: {context} needs both positive and negative examples")]
    SingleClassBatch { context: &'static str },

    #[error("infeasible target: {0}")]
    InfeasibleTarget(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: usize,
        #[source]
        source: Box<IrcoError>,
    },

    #[error("not positive definite: covariance row {row} (pivot {pivot:.3e})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, IrcoError>;
