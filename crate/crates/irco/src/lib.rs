//! Training scoring models for threshold-based rate metrics.
//!
//! Most deployed binary classifiers are a scoring model plus a decision
//! threshold picked to satisfy an operating constraint (a false-positive-rate
//! budget, a recall floor, a coverage rule). Training the scores with plain
//! cross entropy and bolting the threshold on afterwards leaves performance
//! on the table whenever the metric of interest is evaluated *at* that
//! threshold. This crate trains the scores and the thresholds jointly:
//! thresholds are treated as implicit functions of the model parameters,
//! defined by smoothed rate constraints, and are differentiated through via
//! the implicit function theorem. Periodic correction steps re-solve the
//! thresholds exactly on the original non-smooth counts so the constraint
//! never drifts.
//!
//! Module map:
//! - [`metrics`]: exact confusion counts, threshold rates, ROC/PR curves,
//!   partial AUC, and exact threshold search.
//! - [`surrogates`]: temperature-scaled sigmoid/softplus relaxations of the
//!   counts with first and second derivatives.
//! - [`model`]: linear and small MLP scorers over f64 with a per-example
//!   weighted-score vector-Jacobian product.
//! - [`problems`]: objective/constraint bundles (FNR at FPR, precision at
//!   recall, precision at K, partial AUC-ROC/PR, per-group coverage floors).
//! - [`ico`]: the implicit-gradient training loop with threshold updates and
//!   exact corrections.
//! - [`baselines`]: cross-entropy, Lagrangian, and pairwise partial-AUC
//!   reference trainers sharing the same model/optimizer plumbing.
//! - [`data`]: synthetic Gaussian generators, CSV/LIBSVM loaders, splits,
//!   standardization.
//! - [`harness`]: experiment configs, multi-trial runs, reports, curve dumps.

pub mod baselines;
pub mod data;
pub mod error;
pub mod harness;
pub mod ico;
pub mod matrix;
pub mod metrics;
pub mod model;
pub mod problems;
pub mod rng;
pub mod stats;
pub mod surrogates;

pub use error::{IrcoError, Result};
