//! Aggregated experiment results.

use serde::{Deserialize, Serialize};

use crate::error::{IrcoError, Result};
use crate::harness::config::GridPoint;

/// Outcome of one trial: the test metric of the grid point that won model
/// selection on the validation split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed: u64,
    pub selected: GridPoint,
    pub val_metric: f64,
    pub test_metric: f64,
    /// Test metric scaled to percent and rounded to two decimals, the form
    /// used in summary tables.
    pub test_metric_percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub metric: String,
    pub higher_is_better: bool,
    pub trials: Vec<TrialResult>,
    pub mean: f64,
    /// Sample standard deviation (n - 1 denominator), zero for one trial.
    pub std_dev: f64,
    pub mean_percent: f64,
    pub std_dev_percent: f64,
    pub wall_clock_seconds: f64,
}

pub fn to_percent(raw: f64) -> f64 {
    (raw * 100.0 * 100.0).round() / 100.0
}

impl Report {
    pub fn from_trials(
        metric: String,
        higher_is_better: bool,
        trials: Vec<TrialResult>,
        wall_clock_seconds: f64,
    ) -> Result<Report> {
        if trials.is_empty() {
            return Err(IrcoError::InvalidInput("a report needs at least one trial".into()));
        }
        let n = trials.len() as f64;
        let mean = trials.iter().map(|t| t.test_metric).sum::<f64>() / n;
        let std_dev = if trials.len() < 2 {
            0.0
        } else {
            (trials
                .iter()
                .map(|t| (t.test_metric - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0))
                .sqrt()
        };
        Ok(Report {
            metric,
            higher_is_better,
            trials,
            mean,
            std_dev,
            mean_percent: to_percent(mean),
            std_dev_percent: to_percent(std_dev),
            wall_clock_seconds,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Report> {
        Ok(serde_json::from_str(s)?)
    }
}
