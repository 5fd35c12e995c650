//! Datasets: synthetic Gaussian mixtures, CSV and LIBSVM loaders, stratified
//! splits, and feature standardization.
//!
//! The synthetic generators are deterministic in their seed via the counter
//! RNG, so regenerating a dataset never depends on call order. The
//! heteroscedastic preset is the workhorse for end-to-end checks: its two
//! classes have axis-aligned covariances stretched along different axes, so
//! the best linear scorer under a false-positive budget differs sharply from
//! the one that minimizes plain classification loss.

use std::io::Read;

use crate::error::{IrcoError, Result};
use crate::matrix::Matrix;
use crate::metrics::RateKind;
use crate::rng;
use crate::stats;

/// Binary-labeled feature table. `groups`, when present, holds small
/// non-negative group ids used by per-group coverage constraints.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub features: Matrix,
    pub labels: Vec<u8>,
    pub groups: Option<Vec<usize>>,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<u8>, groups: Option<Vec<usize>>) -> Result<Self> {
        if features.rows() != labels.len() {
            return Err(IrcoError::DimensionMismatch {
                context: "dataset labels",
                expected: features.rows(),
                got: labels.len(),
            });
        }
        if let Some(g) = &groups {
            if g.len() != labels.len() {
                return Err(IrcoError::DimensionMismatch {
                    context: "dataset groups",
                    expected: labels.len(),
                    got: g.len(),
                });
            }
        }
        if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
            return Err(IrcoError::InvalidInput(format!(
                "labels must be 0 or 1, got {bad}"
            )));
        }
        Ok(Dataset {
            features,
            labels,
            groups,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.features.cols()
    }

    pub fn n_pos(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn n_neg(&self) -> usize {
        self.len() - self.n_pos()
    }

    /// Number of distinct group ids, assuming ids are dense from zero.
    pub fn n_groups(&self) -> usize {
        match &self.groups {
            Some(g) => g.iter().copied().max().map_or(0, |m| m + 1),
            None => 0,
        }
    }

    /// Rows at `idx`, in the given order.
    pub fn subset(&self, idx: &[usize]) -> Result<Dataset> {
        let features = self.features.gather_rows(idx);
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        let groups = self
            .groups
            .as_ref()
            .map(|g| idx.iter().map(|&i| g[i]).collect());
        Dataset::new(features, labels, groups)
    }
}

// ---------------------------------------------------------------------------
// Synthetic Gaussian mixtures
// ---------------------------------------------------------------------------

/// Two-class Gaussian generative model with arbitrary covariances.
#[derive(Debug, Clone)]
pub struct GaussianSpec {
    pub mean_pos: Vec<f64>,
    pub mean_neg: Vec<f64>,
    pub cov_pos: Matrix,
    pub cov_neg: Matrix,
    pub prior_pos: f64,
}

impl GaussianSpec {
    pub fn dim(&self) -> usize {
        self.mean_pos.len()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if d == 0 {
            return Err(IrcoError::InvalidInput(
                "gaussian spec: dimension must be at least 1".into(),
            ));
        }
        for (name, len) in [
            ("mean_neg", self.mean_neg.len()),
            ("cov_pos rows", self.cov_pos.rows()),
            ("cov_pos cols", self.cov_pos.cols()),
            ("cov_neg rows", self.cov_neg.rows()),
            ("cov_neg cols", self.cov_neg.cols()),
        ] {
            if len != d {
                return Err(IrcoError::InvalidInput(format!(
                    "gaussian spec: {name} is {len}, expected {d}"
                )));
            }
        }
        if !(self.prior_pos > 0.0 && self.prior_pos < 1.0) {
            return Err(IrcoError::InvalidInput(format!(
                "gaussian spec: prior_pos must lie strictly inside (0, 1), got {}",
                self.prior_pos
            )));
        }
        Ok(())
    }

    /// Isotropic helper: both classes share `var * I`.
    pub fn spherical(mean_pos: Vec<f64>, mean_neg: Vec<f64>, var: f64, prior_pos: f64) -> Self {
        let d = mean_pos.len();
        GaussianSpec {
            mean_pos,
            mean_neg,
            cov_pos: Matrix::diag(&vec![var; d]),
            cov_neg: Matrix::diag(&vec![var; d]),
            prior_pos,
        }
    }

    /// Rare positives whose tight spread sits along the axis where negatives
    /// sprawl, and vice versa. A scorer trained for raw accuracy leans on the
    /// first coordinate; once false positives are capped at a few percent the
    /// second coordinate carries most of the usable signal, so constrained
    /// and unconstrained training pull toward visibly different weights.
    pub fn heteroscedastic() -> Self {
        GaussianSpec {
            mean_pos: vec![1.0, 1.0],
            mean_neg: vec![0.0, 0.0],
            cov_pos: Matrix::diag(&[0.25, 4.0]),
            cov_neg: Matrix::diag(&[4.0, 0.25]),
            prior_pos: 0.05,
        }
    }
}

/// Draws `n` examples from the mixture. Labels are Bernoulli in the positive
/// prior; features are `mean + L z` with `L` the covariance's Cholesky factor.
pub fn gen_gaussian(spec: &GaussianSpec, n: usize, seed: u64) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(IrcoError::EmptyBatch {
            context: "gaussian sample",
        });
    }
    let d = spec.dim();
    let l_pos = spec.cov_pos.cholesky()?;
    let l_neg = spec.cov_neg.cholesky()?;
    let label_seed = rng::child_seed(seed, 0);
    let noise_seed = rng::child_seed(seed, 1);
    let pairs_per_row = d.div_ceil(2);

    let mut features = Matrix::zeros(n, d);
    let mut labels = Vec::with_capacity(n);
    let mut z = vec![0.0; d];
    for i in 0..n {
        let label = u8::from(rng::f64_at(label_seed, i as u64) < spec.prior_pos);
        labels.push(label);
        for p in 0..pairs_per_row {
            let (a, b) = rng::normal_pair_at(noise_seed, (i * pairs_per_row + p) as u64);
            z[2 * p] = a;
            if 2 * p + 1 < d {
                z[2 * p + 1] = b;
            }
        }
        let (mean, l) = if label == 1 {
            (&spec.mean_pos, &l_pos)
        } else {
            (&spec.mean_neg, &l_neg)
        };
        let row = features.row_mut(i);
        for r in 0..d {
            let mut v = mean[r];
            // L is lower triangular.
            for (c, &zc) in z.iter().enumerate().take(r + 1) {
                v += l.get(r, c) * zc;
            }
            row[r] = v;
        }
    }
    Dataset::new(features, labels, None)
}

/// Closed-form decision threshold of a linear scorer on one Gaussian class,
/// plus its gradient in the scorer weights.
///
/// Scores are `theta . x`, so on the relevant class they are normal with mean
/// `theta . mu` and variance `theta' Sigma theta`. Solving the rate equation
/// for the threshold gives `theta . mu + z sqrt(theta' Sigma theta)` where
/// `z` is the standard normal quantile matching the target rate, and the
/// gradient follows by the chain rule: `mu + z Sigma theta / sigma`.
///
/// Supported kinds: false-positive rate (negative class), false-negative and
/// true-positive rate (positive class). The weight vector must exclude any
/// bias term.
pub fn analytic_threshold(
    spec: &GaussianSpec,
    theta: &[f64],
    kind: RateKind,
    target: f64,
) -> Result<(f64, Vec<f64>)> {
    spec.validate()?;
    if theta.len() != spec.dim() {
        return Err(IrcoError::DimensionMismatch {
            context: "analytic threshold weights",
            expected: spec.dim(),
            got: theta.len(),
        });
    }
    if !(target > 0.0 && target < 1.0) {
        return Err(IrcoError::InvalidInput(format!(
            "analytic threshold target must lie strictly inside (0, 1), got {target}"
        )));
    }
    // Orient the quantile so the chosen rate equals the target:
    //   FPR  = P(s > lambda | neg) = target  ->  z = quantile(1 - target)
    //   TPR  = P(s > lambda | pos) = target  ->  z = quantile(1 - target)
    //   FNR  = P(s <= lambda | pos) = target ->  z = quantile(target)
    let (mean, cov, z) = match kind {
        RateKind::Fpr => (&spec.mean_neg, &spec.cov_neg, stats::norm_quantile(1.0 - target)),
        RateKind::Tpr => (&spec.mean_pos, &spec.cov_pos, stats::norm_quantile(1.0 - target)),
        RateKind::Fnr => (&spec.mean_pos, &spec.cov_pos, stats::norm_quantile(target)),
        other => {
            return Err(IrcoError::InvalidInput(format!(
                "analytic threshold supports fpr, fnr, and tpr, not {other}"
            )))
        }
    };
    let sigma_theta = cov.matvec(theta)?;
    let var = crate::matrix::dot(theta, &sigma_theta);
    if var <= 0.0 {
        return Err(IrcoError::DegenerateDenominator {
            what: "score variance under the analytic threshold",
            value: var,
            floor: 0.0,
        });
    }
    let sigma = var.sqrt();
    let lambda = crate::matrix::dot(theta, mean) + z * sigma;
    let grad = mean
        .iter()
        .zip(&sigma_theta)
        .map(|(&m, &sv)| m + z * sv / sigma)
        .collect();
    Ok((lambda, grad))
}

// ---------------------------------------------------------------------------
// Splitting and preprocessing
// ---------------------------------------------------------------------------

/// Stratified split into `ratios.len()` parts. Each class is permuted and
/// partitioned separately, so per-split class proportions match the parent
/// dataset to within one example. Ratios must be positive and sum to 1.
pub fn split(dataset: &Dataset, ratios: &[f64], seed: u64) -> Result<Vec<Dataset>> {
    if ratios.is_empty() || ratios.iter().any(|&r| !(r > 0.0)) {
        return Err(IrcoError::InvalidInput(
            "split ratios must be positive".into(),
        ));
    }
    let total: f64 = ratios.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(IrcoError::InvalidInput(format!(
            "split ratios must sum to 1, got {total}"
        )));
    }
    let mut buckets: Vec<Vec<usize>> = vec![Vec::new(); ratios.len()];
    for class in [0u8, 1u8] {
        let members: Vec<usize> = (0..dataset.len())
            .filter(|&i| dataset.labels[i] == class)
            .collect();
        let perm = rng::permutation(rng::child_seed(seed, class as u64), members.len());
        // Cumulative-rounding boundaries keep every class exactly partitioned.
        let n = members.len();
        let mut cum = 0.0;
        let mut start = 0usize;
        for (b, &r) in ratios.iter().enumerate() {
            cum += r;
            let end = if b + 1 == ratios.len() {
                n
            } else {
                (cum * n as f64).round() as usize
            };
            for &p in &perm[start..end.min(n)] {
                buckets[b].push(members[p]);
            }
            start = end.min(n);
        }
    }
    buckets
        .iter_mut()
        .map(|idx| {
            idx.sort_unstable();
            dataset.subset(idx)
        })
        .collect()
}

/// Per-column affine transform fit on one dataset and applied to others.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub means: Vec<f64>,
    pub stds: Vec<f64>,
}

impl Standardizer {
    /// Column means and standard deviations (population, floored at 1e-8).
    pub fn fit(dataset: &Dataset) -> Result<Self> {
        if dataset.is_empty() {
            return Err(IrcoError::EmptyBatch {
                context: "standardizer fit",
            });
        }
        let (n, d) = (dataset.len(), dataset.dim());
        let mut means = vec![0.0; d];
        for i in 0..n {
            for (j, m) in means.iter_mut().enumerate() {
                *m += dataset.features.get(i, j);
            }
        }
        for m in means.iter_mut() {
            *m /= n as f64;
        }
        let mut vars = vec![0.0; d];
        for i in 0..n {
            for (j, v) in vars.iter_mut().enumerate() {
                let c = dataset.features.get(i, j) - means[j];
                *v += c * c;
            }
        }
        let stds = vars
            .iter()
            .map(|&v| (v / n as f64).sqrt().max(1e-8))
            .collect();
        Ok(Standardizer { means, stds })
    }

    pub fn apply(&self, dataset: &mut Dataset) -> Result<()> {
        if dataset.dim() != self.means.len() {
            return Err(IrcoError::DimensionMismatch {
                context: "standardizer apply",
                expected: self.means.len(),
                got: dataset.dim(),
            });
        }
        for i in 0..dataset.len() {
            let row = dataset.features.row_mut(i);
            for (j, x) in row.iter_mut().enumerate() {
                *x = (*x - self.means[j]) / self.stds[j];
            }
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// File formats
// ---------------------------------------------------------------------------

/// Parses a headed CSV. The column named `label` (required) must be 0 or 1;
/// an optional `group` column holds non-negative integer ids; every other
/// column is a feature, kept in file order. Values must be finite.
pub fn load_csv_reader<R: Read>(reader: R) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let mut label_col = None;
    let mut group_col = None;
    let mut feature_cols = Vec::new();
    for (j, name) in headers.iter().enumerate() {
        match name {
            "label" => label_col = Some(j),
            "group" => group_col = Some(j),
            _ => feature_cols.push(j),
        }
    }
    let label_col = label_col.ok_or_else(|| {
        IrcoError::InvalidInput("csv: missing required column named \"label\"".into())
    })?;
    if feature_cols.is_empty() {
        return Err(IrcoError::InvalidInput(
            "csv: no feature columns besides label/group".into(),
        ));
    }

    let mut data = Vec::new();
    let mut labels = Vec::new();
    let mut groups = Vec::new();
    for (idx, record) in rdr.records().enumerate() {
        let line = idx + 2; // header occupies line 1
        let record = record?;
        if record.len() != headers.len() {
            return Err(IrcoError::Parse {
                line,
                message: format!(
                    "expected {} fields, got {}",
                    headers.len(),
                    record.len()
                ),
            });
        }
        let label_raw = &record[label_col];
        match label_raw {
            "0" => labels.push(0u8),
            "1" => labels.push(1u8),
            other => {
                return Err(IrcoError::Parse {
                    line,
                    message: format!("label must be 0 or 1, got {other:?}"),
                })
            }
        }
        if let Some(gc) = group_col {
            let g: usize = record[gc].parse().map_err(|_| IrcoError::Parse {
                line,
                message: format!("group must be a non-negative integer, got {:?}", &record[gc]),
            })?;
            groups.push(g);
        }
        for &j in &feature_cols {
            let v: f64 = record[j].parse().map_err(|_| IrcoError::Parse {
                line,
                message: format!("column {:?}: not a number: {:?}", &headers[j], &record[j]),
            })?;
            if !v.is_finite() {
                return Err(IrcoError::Parse {
                    line,
                    message: format!("column {:?}: value must be finite, got {v}", &headers[j]),
                });
            }
            data.push(v);
        }
    }
    if labels.is_empty() {
        return Err(IrcoError::EmptyBatch { context: "csv load" });
    }
    let features = Matrix::from_vec(labels.len(), feature_cols.len(), data)?;
    Dataset::new(features, labels, group_col.map(|_| groups))
}

pub fn load_csv_path(path: &std::path::Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_csv_reader(std::io::BufReader::new(file))
}

/// Densified feature-count ceiling for sparse files; indices beyond this are
/// rejected rather than allocated.
const MAX_LIBSVM_FEATURES: usize = 1_000_000;
const MAX_LIBSVM_CELLS: usize = 50_000_000;

/// Parses LIBSVM lines: `label index:value ...` with 1-based indices. Labels
/// +1/1 map to 1 and -1/0 map to 0. Missing entries are zero; the feature
/// count is the largest index seen.
pub fn load_libsvm_reader<R: Read>(reader: R) -> Result<Dataset> {
    use std::io::BufRead;
    let buf = std::io::BufReader::new(reader);
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut max_index = 0usize;
    for (idx, line) in buf.lines().enumerate() {
        let line_no = idx + 1;
        let line = line?;
        // Strip trailing comments, a convention some exporters use.
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut parts = line.split_ascii_whitespace();
        let label_tok = parts.next().expect("non-empty line has a first token");
        let label = match label_tok {
            "+1" | "1" | "1.0" => 1u8,
            "-1" | "0" | "0.0" | "-1.0" => 0u8,
            other => {
                return Err(IrcoError::Parse {
                    line: line_no,
                    message: format!("label must be +1/-1 or 1/0, got {other:?}"),
                })
            }
        };
        let mut entries = Vec::new();
        let mut prev_index = 0usize;
        for tok in parts {
            let (is, vs) = tok.split_once(':').ok_or_else(|| IrcoError::Parse {
                line: line_no,
                message: format!("expected index:value, got {tok:?}"),
            })?;
            let index: usize = is.parse().map_err(|_| IrcoError::Parse {
                line: line_no,
                message: format!("feature index must be a positive integer, got {is:?}"),
            })?;
            if index == 0 {
                return Err(IrcoError::Parse {
                    line: line_no,
                    message: "feature indices are 1-based, got 0".into(),
                });
            }
            if index <= prev_index {
                return Err(IrcoError::Parse {
                    line: line_no,
                    message: format!(
                        "feature indices must be strictly increasing, got {index} after {prev_index}"
                    ),
                });
            }
            if index > MAX_LIBSVM_FEATURES {
                return Err(IrcoError::Parse {
                    line: line_no,
                    message: format!(
                        "feature index {index} exceeds the supported maximum {MAX_LIBSVM_FEATURES}"
                    ),
                });
            }
            prev_index = index;
            let value: f64 = vs.parse().map_err(|_| IrcoError::Parse {
                line: line_no,
                message: format!("feature value is not a number: {vs:?}"),
            })?;
            if !value.is_finite() {
                return Err(IrcoError::Parse {
                    line: line_no,
                    message: format!("feature value must be finite, got {value}"),
                });
            }
            max_index = max_index.max(index);
            entries.push((index - 1, value));
        }
        labels.push(label);
        rows.push(entries);
    }
    if labels.is_empty() {
        return Err(IrcoError::EmptyBatch {
            context: "libsvm load",
        });
    }
    if max_index == 0 {
        return Err(IrcoError::InvalidInput(
            "libsvm: no feature entries in the whole file".into(),
        ));
    }
    if labels.len().saturating_mul(max_index) > MAX_LIBSVM_CELLS {
        return Err(IrcoError::InvalidInput(format!(
            "libsvm: dense size {} x {} exceeds the supported budget",
            labels.len(),
            max_index
        )));
    }
    let mut features = Matrix::zeros(labels.len(), max_index);
    for (i, entries) in rows.iter().enumerate() {
        let row = features.row_mut(i);
        for &(j, v) in entries {
            row[j] = v;
        }
    }
    Dataset::new(features, labels, None)
}

pub fn load_libsvm_path(path: &std::path::Path) -> Result<Dataset> {
    let file = std::fs::File::open(path)?;
    load_libsvm_reader(std::io::BufReader::new(file))
}
