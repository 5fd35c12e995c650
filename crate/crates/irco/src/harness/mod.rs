//! Experiment orchestration: configuration, multi-trial runs with model
//! selection, aggregate reports, curve emission, and gradient checking.

pub mod config;
pub mod report;
pub mod runner;

pub use config::{
    resolve_data_path, DatasetConfig, DiagonalGaussian, ExperimentConfig, GridConfig, GridPoint,
    Method,
};
pub use report::{Report, TrialResult};
pub use runner::{
    emit_curves, gradcheck, run_experiment, run_experiment_threads, run_single, SingleRun,
};
