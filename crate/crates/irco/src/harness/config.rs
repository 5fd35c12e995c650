//! Experiment configuration schema.
//!
//! Configs are JSON with unknown keys rejected everywhere, so a typo in a
//! hyper-parameter name fails loudly instead of silently training with the
//! default. The hyper-parameter grid is validated against the chosen
//! method's actual tunables for the same reason.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{self, Dataset, GaussianSpec, Standardizer};
use crate::error::{IrcoError, Result};
use crate::ico::TrainerConfig;
use crate::matrix::Matrix;
use crate::model::ArchSpec;
use crate::problems::ProblemKind;
use crate::rng;

/// Which trainer produces the scoring model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Ico,
    Ce,
    Lagrangian,
    Pairwise,
}

/// Class-conditional Gaussian with diagonal covariances, JSON-friendly form
/// of the synthetic generator input.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagonalGaussian {
    pub mean_pos: Vec<f64>,
    pub mean_neg: Vec<f64>,
    pub var_pos: Vec<f64>,
    pub var_neg: Vec<f64>,
    pub prior_pos: f64,
}

impl DiagonalGaussian {
    pub fn to_spec(&self) -> Result<GaussianSpec> {
        let spec = GaussianSpec {
            mean_pos: self.mean_pos.clone(),
            mean_neg: self.mean_neg.clone(),
            cov_pos: Matrix::diag(&self.var_pos),
            cov_neg: Matrix::diag(&self.var_neg),
            prior_pos: self.prior_pos,
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Where the data comes from and how it is split.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    /// Synthetic draw from a diagonal-covariance Gaussian pair, resampled
    /// per trial.
    Gaussian {
        spec: DiagonalGaussian,
        n: usize,
        split: Vec<f64>,
        #[serde(default)]
        standardize: bool,
    },
    /// The built-in axis-mismatched Gaussian pair: the direction that
    /// minimizes overall error differs from the one that is best at low
    /// false positive rates, so threshold-aware training has headroom.
    Heteroscedastic {
        n: usize,
        split: Vec<f64>,
        #[serde(default)]
        standardize: bool,
    },
    Csv {
        path: PathBuf,
        split: Vec<f64>,
        #[serde(default)]
        standardize: bool,
    },
    Libsvm {
        path: PathBuf,
        split: Vec<f64>,
        #[serde(default)]
        standardize: bool,
    },
}

/// Relative dataset paths resolve against `IRCO_DATA_DIR` when it is set.
pub fn resolve_data_path(path: &Path) -> PathBuf {
    resolve_against(std::env::var_os("IRCO_DATA_DIR").map(PathBuf::from).as_deref(), path)
}

fn resolve_against(base: Option<&Path>, path: &Path) -> PathBuf {
    if path.is_absolute() {
        return path.to_path_buf();
    }
    match base {
        Some(b) => b.join(path),
        None => path.to_path_buf(),
    }
}

impl DatasetConfig {
    pub fn split_ratios(&self) -> &[f64] {
        match self {
            DatasetConfig::Gaussian { split, .. }
            | DatasetConfig::Heteroscedastic { split, .. }
            | DatasetConfig::Csv { split, .. }
            | DatasetConfig::Libsvm { split, .. } => split,
        }
    }

    fn standardize(&self) -> bool {
        match self {
            DatasetConfig::Gaussian { standardize, .. }
            | DatasetConfig::Heteroscedastic { standardize, .. }
            | DatasetConfig::Csv { standardize, .. }
            | DatasetConfig::Libsvm { standardize, .. } => *standardize,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ratios = self.split_ratios();
        if ratios.len() != 3 {
            return Err(IrcoError::Config(format!(
                "split must list exactly train/validation/test ratios, got {} entries",
                ratios.len()
            )));
        }
        if ratios.iter().any(|&r| !(r > 0.0 && r.is_finite())) {
            return Err(IrcoError::Config(
                "split ratios must be positive and finite".into(),
            ));
        }
        let total: f64 = ratios.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(IrcoError::Config(format!(
                "split ratios must sum to 1, got {total}"
            )));
        }
        if let DatasetConfig::Gaussian { spec, n, .. } = self {
            spec.to_spec()?;
            if *n == 0 {
                return Err(IrcoError::Config("gaussian dataset needs n > 0".into()));
            }
        }
        if let DatasetConfig::Heteroscedastic { n, .. } = self {
            if *n == 0 {
                return Err(IrcoError::Config("heteroscedastic dataset needs n > 0".into()));
            }
        }
        Ok(())
    }

    /// Materializes train/validation/test splits for one trial. Synthetic
    /// sources are resampled per trial; file sources are reloaded and
    /// re-split. Standardization statistics come from the train split only.
    pub fn load(&self, trial_seed: u64) -> Result<[Dataset; 3]> {
        let full = match self {
            DatasetConfig::Gaussian { spec, n, .. } => {
                data::gen_gaussian(&spec.to_spec()?, *n, rng::child_seed(trial_seed, 11))?
            }
            DatasetConfig::Heteroscedastic { n, .. } => data::gen_gaussian(
                &GaussianSpec::heteroscedastic(),
                *n,
                rng::child_seed(trial_seed, 11),
            )?,
            DatasetConfig::Csv { path, .. } => data::load_csv_path(&resolve_data_path(path))?,
            DatasetConfig::Libsvm { path, .. } => {
                data::load_libsvm_path(&resolve_data_path(path))?
            }
        };
        let mut parts = data::split(&full, self.split_ratios(), rng::child_seed(trial_seed, 12))?;
        if self.standardize() {
            let standardizer = Standardizer::fit(&parts[0])?;
            for part in &mut parts {
                standardizer.apply(part)?;
            }
        }
        let mut it = parts.into_iter();
        Ok([
            it.next().expect("three splits"),
            it.next().expect("three splits"),
            it.next().expect("three splits"),
        ])
    }
}

/// Hyper-parameter lists to sweep. Absent keys stay at the base trainer
/// value; present keys must be tunables of the chosen method.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridConfig {
    pub learning_rate: Option<Vec<f64>>,
    pub temperature: Option<Vec<f64>>,
    pub reg_strength: Option<Vec<f64>>,
    pub dual_step: Option<Vec<f64>>,
}

impl GridConfig {
    fn keys(&self) -> Vec<&'static str> {
        let mut out = Vec::new();
        if self.learning_rate.is_some() {
            out.push("learning_rate");
        }
        if self.temperature.is_some() {
            out.push("temperature");
        }
        if self.reg_strength.is_some() {
            out.push("reg_strength");
        }
        if self.dual_step.is_some() {
            out.push("dual_step");
        }
        out
    }
}

/// One resolved point of the hyper-parameter grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub learning_rate: f64,
    pub temperature: f64,
    pub reg_strength: f64,
    pub dual_step: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub problem: ProblemKind,
    pub dataset: DatasetConfig,
    pub arch: ArchSpec,
    pub trainer: TrainerConfig,
    pub method: Method,
    pub trials: usize,
    #[serde(default)]
    pub grid: GridConfig,
    /// Dual ascent rate; required by the Lagrangian method (here or in the
    /// grid), rejected elsewhere.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dual_step: Option<f64>,
}

fn method_tunables(method: Method) -> &'static [&'static str] {
    match method {
        Method::Ico => &["learning_rate", "temperature", "reg_strength"],
        Method::Ce => &["learning_rate"],
        Method::Lagrangian => &["learning_rate", "temperature", "dual_step"],
        Method::Pairwise => &["learning_rate", "temperature"],
    }
}

impl ExperimentConfig {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.problem.build()?;
        self.dataset.validate()?;
        self.arch.validate()?;
        self.trainer.validate()?;
        if self.trials == 0 {
            return Err(IrcoError::Config("trials must be at least 1".into()));
        }
        let allowed = method_tunables(self.method);
        for key in self.grid.keys() {
            if !allowed.contains(&key) {
                return Err(IrcoError::Config(format!(
                    "grid key {key:?} is not a tunable of method {:?}; allowed: {allowed:?}",
                    self.method
                )));
            }
        }
        for (key, values) in [
            ("learning_rate", &self.grid.learning_rate),
            ("temperature", &self.grid.temperature),
            ("reg_strength", &self.grid.reg_strength),
            ("dual_step", &self.grid.dual_step),
        ] {
            if let Some(v) = values {
                if v.is_empty() {
                    return Err(IrcoError::Config(format!("grid key {key:?} lists no values")));
                }
                if v.iter().any(|x| !x.is_finite()) {
                    return Err(IrcoError::Config(format!(
                        "grid key {key:?} contains a non-finite value"
                    )));
                }
            }
        }
        match self.method {
            Method::Lagrangian => {
                if self.dual_step.is_none() && self.grid.dual_step.is_none() {
                    return Err(IrcoError::Config(
                        "the lagrangian method needs dual_step, either as a base value or a \
                         grid list"
                            .into(),
                    ));
                }
                if let Some(d) = self.dual_step {
                    if !(d > 0.0 && d.is_finite()) {
                        return Err(IrcoError::Config(format!(
                            "dual_step must be positive and finite, got {d}"
                        )));
                    }
                }
            }
            _ => {
                if self.dual_step.is_some() {
                    return Err(IrcoError::Config(format!(
                        "dual_step applies only to the lagrangian method, not {:?}",
                        self.method
                    )));
                }
            }
        }
        Ok(())
    }

    /// Cartesian product of the grid lists, base values filling the gaps.
    /// Order is deterministic: learning rate varies slowest, dual step
    /// fastest.
    pub fn grid_points(&self) -> Vec<GridPoint> {
        let lrs = self
            .grid
            .learning_rate
            .clone()
            .unwrap_or_else(|| vec![self.trainer.learning_rate]);
        let taus = self
            .grid
            .temperature
            .clone()
            .unwrap_or_else(|| vec![self.trainer.surrogate.tau]);
        let regs = self
            .grid
            .reg_strength
            .clone()
            .unwrap_or_else(|| vec![self.trainer.reg_strength]);
        let duals: Vec<Option<f64>> = match (&self.grid.dual_step, self.dual_step) {
            (Some(list), _) => list.iter().copied().map(Some).collect(),
            (None, base) => vec![base],
        };
        let mut out = Vec::with_capacity(lrs.len() * taus.len() * regs.len() * duals.len());
        for &lr in &lrs {
            for &tau in &taus {
                for &reg in &regs {
                    for &dual in &duals {
                        out.push(GridPoint {
                            learning_rate: lr,
                            temperature: tau,
                            reg_strength: reg,
                            dual_step: dual,
                        });
                    }
                }
            }
        }
        out
    }

    /// Trainer config with one grid point and one trial's seed applied.
    pub fn trainer_at(&self, point: &GridPoint, trial_seed: u64) -> Result<TrainerConfig> {
        let mut cfg = self.trainer.clone();
        cfg.learning_rate = point.learning_rate;
        cfg.surrogate = crate::surrogates::Surrogate::new(cfg.surrogate.kind, point.temperature)?;
        cfg.reg_strength = point.reg_strength;
        cfg.seed = trial_seed;
        Ok(cfg)
    }
}
