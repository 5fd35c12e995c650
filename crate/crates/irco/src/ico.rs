//! The constrained training loop.
//!
//! Thresholds are treated as implicit functions of the model parameters: the
//! smoothed constraint pins each threshold, so differentiating through the
//! pinning equation yields the threshold's parameter gradient without ever
//! materializing a second-order solve. Between exact corrections the
//! thresholds ride along with first-order updates; every `correction_period`
//! steps they are re-solved from raw counts on the recently seen examples.
//!
//! The objective gradient has two forms. With one constraint the threshold
//! gradient `H = -grad_g / (dg/dlambda)` is built explicitly, because the
//! first-order threshold update needs it. With several constraints the
//! per-constraint slope ratios fold into a single weighted backward pass and
//! threshold maintenance is left entirely to the correction step.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{IrcoError, Result};
use crate::matrix::dot;
use crate::model::{self, ArchSpec, ModelParams};
use crate::problems::{self, ProblemSpec, Relation};
use crate::rng;
use crate::surrogates::Surrogate;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
    Adagrad,
}

/// How inequality constraints are enforced. `Search` re-solves a threshold
/// at corrections only while its constraint is violated; `Slack` carries
/// explicit non-negative slack variables that turn each inequality into an
/// equality and take their own gradient steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum InequalityMode {
    #[default]
    Search,
    Slack,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    /// Steps between exact corrections (N).
    #[serde(default = "default_correction_period")]
    pub correction_period: usize,
    /// Number of recent minibatches a correction accumulates (k).
    #[serde(default = "default_accumulation")]
    pub accumulation_k: usize,
    pub surrogate: Surrogate,
    #[serde(default)]
    pub reg_strength: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Epochs of plain cross-entropy descent before the constrained loop.
    /// The composite objective is not convex in general; starting from the
    /// basin of the convex surrogate avoids spurious stationary directions.
    #[serde(default)]
    pub warmup_epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub inequality_mode: InequalityMode,
}

fn default_correction_period() -> usize {
    10
}

fn default_accumulation() -> usize {
    5
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(IrcoError::Config(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.correction_period == 0 {
            return Err(IrcoError::Config("correction_period must be at least 1".into()));
        }
        if self.accumulation_k == 0 {
            return Err(IrcoError::Config("accumulation_k must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(IrcoError::Config("batch_size must be at least 1".into()));
        }
        if !(self.reg_strength >= 0.0 && self.reg_strength.is_finite()) {
            return Err(IrcoError::Config(format!(
                "reg_strength must be non-negative, got {}",
                self.reg_strength
            )));
        }
        self.surrogate.validate()
    }
}

// ---------------------------------------------------------------------------
// Optimizers
// ---------------------------------------------------------------------------

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;
const ADAGRAD_INIT: f64 = 0.1;

/// First-order optimizer over a flat coordinate vector.
#[derive(Debug, Clone)]
pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    step: u64,
    m1: Vec<f64>,
    m2: Vec<f64>,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, dim: usize) -> Self {
        let init2 = if kind == OptimizerKind::Adagrad {
            ADAGRAD_INIT
        } else {
            0.0
        };
        Optimizer {
            kind,
            lr,
            step: 0,
            m1: vec![0.0; dim],
            m2: vec![init2; dim],
        }
    }

    /// Applies one update in place and returns the applied delta.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) -> Result<Vec<f64>> {
        if params.len() != self.m1.len() || grad.len() != self.m1.len() {
            return Err(IrcoError::DimensionMismatch {
                context: "optimizer step",
                expected: self.m1.len(),
                got: grad.len(),
            });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(IrcoError::Divergence {
                what: "gradient",
                step: self.step as usize,
            });
        }
        self.step += 1;
        let mut delta = vec![0.0; grad.len()];
        match self.kind {
            OptimizerKind::Sgd => {
                for i in 0..grad.len() {
                    delta[i] = -self.lr * grad[i];
                }
            }
            OptimizerKind::Adam => {
                let bc1 = 1.0 - ADAM_BETA1.powi(self.step as i32);
                let bc2 = 1.0 - ADAM_BETA2.powi(self.step as i32);
                for i in 0..grad.len() {
                    self.m1[i] = ADAM_BETA1 * self.m1[i] + (1.0 - ADAM_BETA1) * grad[i];
                    self.m2[i] = ADAM_BETA2 * self.m2[i] + (1.0 - ADAM_BETA2) * grad[i] * grad[i];
                    let mhat = self.m1[i] / bc1;
                    let vhat = self.m2[i] / bc2;
                    delta[i] = -self.lr * mhat / (vhat.sqrt() + ADAM_EPS);
                }
            }
            OptimizerKind::Adagrad => {
                for i in 0..grad.len() {
                    self.m2[i] += grad[i] * grad[i];
                    delta[i] = -self.lr * grad[i] / self.m2[i].sqrt();
                }
            }
        }
        for i in 0..params.len() {
            params[i] += delta[i];
        }
        Ok(delta)
    }
}

// ---------------------------------------------------------------------------
// Threshold state and implicit gradients
// ---------------------------------------------------------------------------

/// Thresholds plus, in slack mode, the per-constraint slack variables
/// (indexed by threshold; entries for equality constraints stay zero).
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdState {
    pub lambdas: Vec<f64>,
    pub slacks: Option<Vec<f64>>,
}

impl ThresholdState {
    pub fn new(m: usize, with_slacks: bool) -> Self {
        ThresholdState {
            lambdas: vec![0.0; m],
            slacks: with_slacks.then(|| vec![0.0; m]),
        }
    }

    fn project_slacks(&mut self) {
        if let Some(s) = &mut self.slacks {
            for v in s.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
    }
}

/// Everything the trainer needs from one implicit-differentiation pass.
/// Per-threshold vectors are indexed by threshold, not constraint order.
#[derive(Debug, Clone)]
pub struct ImplicitGradient {
    /// Full objective gradient over the model parameters, regularizer
    /// included.
    pub g_theta: Vec<f64>,
    /// Objective sensitivity to each threshold.
    pub f_dlambda: Vec<f64>,
    /// Raw constraint slope dg/dlambda per threshold.
    pub g_dlambda: Vec<f64>,
    /// Slope ratios f_dlambda / g_dlambda.
    pub ratios: Vec<f64>,
    /// Explicit per-threshold parameter gradients of the implicit threshold;
    /// present only in single-constraint mode where the first-order threshold
    /// update consumes them.
    pub h_grads: Option<Vec<Vec<f64>>>,
    /// Objective gradient in the slack variables (slack mode only).
    pub slack_grads: Option<Vec<f64>>,
    /// Threshold sensitivity to its own slack (slack mode only).
    pub lambda_dslack: Option<Vec<f64>>,
}

const SLOPE_FLOOR: f64 = 1e-10;

/// Relation of the constraint governing each threshold.
fn relations_by_threshold(spec: &ProblemSpec) -> Vec<Relation> {
    let mut rel = vec![Relation::Equals; spec.m()];
    for c in &spec.constraints {
        rel[c.governed_threshold] = c.relation;
    }
    rel
}

/// Implicit objective gradient at one batch.
///
/// The constraint pins `g(theta, lambda) = 0`, so the threshold's parameter
/// gradient is `-grad_g / (dg/dlambda)` and the chain rule adds
/// `(df/dlambda) * H` to the direct objective gradient. With several
/// constraints the slope ratios combine the per-example weights first, so a
/// single backward pass covers objective, all constraints, and the slope
/// regularizer.
pub fn implicit_gradient(
    spec: &ProblemSpec,
    params: &ModelParams,
    batch: &Dataset,
    thresholds: &ThresholdState,
    surrogate: &Surrogate,
    reg_strength: f64,
    slack_mode: bool,
) -> Result<ImplicitGradient> {
    let scores = model::forward(params, &batch.features)?;
    let eval = problems::evaluate(
        spec,
        &scores,
        &batch.labels,
        batch.groups.as_deref(),
        &thresholds.lambdas,
        surrogate,
    )?;
    let m = spec.m();
    let n = scores.len();

    // Reorder constraint evaluations by governed threshold.
    let mut by_t: Vec<&problems::ConstraintEval> = Vec::with_capacity(m);
    {
        let mut slots: Vec<Option<&problems::ConstraintEval>> = vec![None; m];
        for (ci, c) in spec.constraints.iter().enumerate() {
            slots[c.governed_threshold] = Some(&eval.constraints[ci]);
        }
        by_t.extend(slots.into_iter().map(|s| s.expect("bijection validated")));
    }

    let mut g_dlambda = vec![0.0; m];
    let mut ratios = vec![0.0; m];
    for t in 0..m {
        let slope = by_t[t].d_lambda;
        if slope.abs() <= SLOPE_FLOOR {
            return Err(IrcoError::DegenerateConstraintSlope {
                index: t,
                slope,
            });
        }
        g_dlambda[t] = slope;
        ratios[t] = eval.obj_d_lambda[t] / slope;
    }

    // Regularizer weights: d/dp of strength * sum_t (dg_t/dlambda_t)^2,
    // thresholds held constant.
    let mut reg_weights = vec![0.0; n];
    if reg_strength > 0.0 {
        for t in 0..m {
            let scale = 2.0 * reg_strength * g_dlambda[t];
            for (w, d2) in reg_weights.iter_mut().zip(&by_t[t].d2_lambda_score) {
                *w += scale * d2;
            }
        }
    }

    let (g_theta, h_grads) = if m == 1 {
        // Explicit H; the threshold update consumes it.
        let grad_g = model::vjp(params, &batch.features, &by_t[0].d_score)?;
        let h: Vec<f64> = grad_g.iter().map(|&v| -v / g_dlambda[0]).collect();
        let mut direct_weights = eval.obj_d_score.clone();
        for (w, r) in direct_weights.iter_mut().zip(&reg_weights) {
            *w += r;
        }
        let mut g = model::vjp(params, &batch.features, &direct_weights)?;
        for (gi, hi) in g.iter_mut().zip(&h) {
            *gi += eval.obj_d_lambda[0] * hi;
        }
        (g, Some(vec![h]))
    } else {
        // Combined weights, one backward pass.
        let mut weights = eval.obj_d_score.clone();
        for t in 0..m {
            for (w, d) in weights.iter_mut().zip(&by_t[t].d_score) {
                *w -= ratios[t] * d;
            }
        }
        for (w, r) in weights.iter_mut().zip(&reg_weights) {
            *w += r;
        }
        (model::vjp(params, &batch.features, &weights)?, None)
    };

    let (slack_grads, lambda_dslack) = if slack_mode {
        let rel = relations_by_threshold(spec);
        let mut sg = vec![0.0; m];
        let mut ls = vec![0.0; m];
        for t in 0..m {
            if rel[t] == Relation::Equals {
                continue;
            }
            // Oriented residual c + slack = 0 defines lambda(theta, slack);
            // the orientation sign carries through the slope.
            let c_slope = problems::oriented_residual(rel[t], g_dlambda[t]);
            ls[t] = -1.0 / c_slope;
            sg[t] = eval.obj_d_lambda[t] * ls[t];
        }
        (Some(sg), Some(ls))
    } else {
        (None, None)
    };

    Ok(ImplicitGradient {
        g_theta,
        f_dlambda: eval.obj_d_lambda,
        g_dlambda,
        ratios,
        h_grads,
        slack_grads,
        lambda_dslack,
    })
}

/// Reference form of the multi-constraint gradient: one backward pass per
/// constraint plus one for the objective, summed explicitly. Exists to pin
/// down the combined-weight shortcut; no regularizer.
pub fn implicit_gradient_naive(
    spec: &ProblemSpec,
    params: &ModelParams,
    batch: &Dataset,
    thresholds: &ThresholdState,
    surrogate: &Surrogate,
) -> Result<Vec<f64>> {
    let scores = model::forward(params, &batch.features)?;
    let eval = problems::evaluate(
        spec,
        &scores,
        &batch.labels,
        batch.groups.as_deref(),
        &thresholds.lambdas,
        surrogate,
    )?;
    let mut g = model::vjp(params, &batch.features, &eval.obj_d_score)?;
    for (ci, c) in spec.constraints.iter().enumerate() {
        let t = c.governed_threshold;
        let slope = eval.constraints[ci].d_lambda;
        if slope.abs() <= SLOPE_FLOOR {
            return Err(IrcoError::DegenerateConstraintSlope { index: t, slope });
        }
        let ratio = eval.obj_d_lambda[t] / slope;
        let grad_gi = model::vjp(params, &batch.features, &eval.constraints[ci].d_score)?;
        for (acc, v) in g.iter_mut().zip(&grad_gi) {
            *acc -= ratio * v;
        }
    }
    Ok(g)
}

/// Gradient over the model parameters of the slope penalty
/// `strength * sum_t (dg_t/dlambda_t)^2`, thresholds held constant.
pub fn regularizer_gradient(
    spec: &ProblemSpec,
    params: &ModelParams,
    batch: &Dataset,
    lambdas: &[f64],
    surrogate: &Surrogate,
    strength: f64,
) -> Result<Vec<f64>> {
    if strength == 0.0 {
        return Ok(vec![0.0; params.theta.len()]);
    }
    let scores = model::forward(params, &batch.features)?;
    let eval = problems::evaluate(
        spec,
        &scores,
        &batch.labels,
        batch.groups.as_deref(),
        lambdas,
        surrogate,
    )?;
    let mut weights = vec![0.0; scores.len()];
    for c in &eval.constraints {
        let scale = 2.0 * strength * c.d_lambda;
        for (w, d2) in weights.iter_mut().zip(&c.d2_lambda_score) {
            *w += scale * d2;
        }
    }
    model::vjp(params, &batch.features, &weights)
}

/// First-order threshold ride-along between corrections:
/// `lambda += <grad_lambda, delta_theta>`, plus the slack term in slack mode.
/// A no-op when the explicit threshold gradients were not built (ratio mode).
pub fn threshold_gradient_update(
    state: &mut ThresholdState,
    ig: &ImplicitGradient,
    delta_theta: &[f64],
    delta_slack: Option<&[f64]>,
) {
    let Some(h_grads) = &ig.h_grads else {
        return;
    };
    for (t, h) in h_grads.iter().enumerate() {
        state.lambdas[t] += dot(h, delta_theta);
    }
    if let (Some(ls), Some(ds)) = (&ig.lambda_dslack, delta_slack) {
        for t in 0..state.lambdas.len() {
            state.lambdas[t] += ls[t] * ds[t];
        }
    }
}

/// Exact threshold reset from raw counts on the accumulated examples.
///
/// Equality constraints always re-solve. Inequalities re-solve only while
/// violated (search mode); in slack mode they also re-solve and the slack is
/// reset to absorb whatever margin remains. A constraint whose exact solve
/// fails (a class or group missing from the accumulation) keeps its previous
/// threshold and logs a warning.
pub fn correction_step(
    spec: &ProblemSpec,
    state: &mut ThresholdState,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    mode: InequalityMode,
) {
    for (ci, c) in spec.constraints.iter().enumerate() {
        let t = c.governed_threshold;
        let must_solve = match (mode, c.relation) {
            (_, Relation::Equals) | (InequalityMode::Slack, _) => true,
            (InequalityMode::Search, _) => {
                match problems::unrelaxed_residual(spec, ci, scores, labels, groups, state.lambdas[t])
                {
                    Ok(raw) => problems::needs_correction(c.relation, raw),
                    Err(e) => {
                        log::warn!("correction residual check failed for constraint {ci}: {e}");
                        false
                    }
                }
            }
        };
        if !must_solve {
            continue;
        }
        match problems::correct_threshold(spec, ci, scores, labels, groups) {
            Ok(lam) => state.lambdas[t] = lam,
            Err(e) => {
                log::warn!("correction kept previous threshold {t}: {e}");
                continue;
            }
        }
        if let Some(slacks) = &mut state.slacks {
            if c.relation != Relation::Equals {
                match problems::unrelaxed_residual(spec, ci, scores, labels, groups, state.lambdas[t])
                {
                    Ok(raw) => {
                        slacks[t] = (-problems::oriented_residual(c.relation, raw)).max(0.0);
                    }
                    Err(e) => log::warn!("slack reset skipped for constraint {ci}: {e}"),
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Training loop
// ---------------------------------------------------------------------------

/// Per-epoch training trace.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryRow {
    pub epoch: usize,
    pub step: u64,
    pub train_objective: f64,
    pub train_constraint_residual: f64,
    pub val_metric: f64,
    pub lambdas: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct History {
    pub rows: Vec<HistoryRow>,
}

impl History {
    pub fn to_csv(&self) -> String {
        let m = self.rows.first().map_or(0, |r| r.lambdas.len());
        let mut out = String::from("epoch,step,train_objective,train_constraint_residual,val_metric");
        for i in 0..m {
            out.push_str(&format!(",lambda_{i}"));
        }
        out.push('\n');
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{:.17e},{:.17e},{:.17e}",
                r.epoch, r.step, r.train_objective, r.train_constraint_residual, r.val_metric
            ));
            for l in &r.lambdas {
                out.push_str(&format!(",{l:.17e}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub params: ModelParams,
    pub thresholds: ThresholdState,
    pub history: History,
}

/// Deterministic minibatch index sets for one epoch. The last batch absorbs
/// any short trailing chunk, so every batch holds at least `batch_size`
/// examples whenever `n >= batch_size`.
pub(crate) fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let perm = rng::permutation(rng::child_seed(seed, 1000 + epoch as u64), n);
    let mut batches: Vec<Vec<usize>> = perm.chunks(batch_size).map(|c| c.to_vec()).collect();
    if batches.len() > 1 && batches.last().is_some_and(|b| b.len() < batch_size) {
        let tail = batches.pop().expect("checked non-empty");
        batches.last_mut().expect("checked len > 1").extend(tail);
    }
    batches
}

fn has_both_classes(labels: &[u8]) -> bool {
    labels.iter().any(|&l| l == 1) && labels.iter().any(|&l| l == 0)
}

/// Whether a failed batch evaluation is a transient artifact of minibatch
/// composition (skippable) rather than a real fault.
fn batch_is_degenerate(e: &IrcoError) -> bool {
    matches!(
        e,
        IrcoError::UndefinedRate { .. }
            | IrcoError::EmptyBatch { .. }
            | IrcoError::SingleClassBatch { .. }
    )
}

struct Snapshot {
    params: ModelParams,
    thresholds: ThresholdState,
    metric: f64,
}

/// Runs the full training loop and returns the best-validation iterate with
/// thresholds from a final exact correction on the whole training split.
pub fn train(
    spec: &ProblemSpec,
    train_split: &Dataset,
    val_split: &Dataset,
    arch: &ArchSpec,
    cfg: &TrainerConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    spec.validate()?;
    if !has_both_classes(&train_split.labels) {
        return Err(IrcoError::SingleClassBatch {
            context: "training split",
        });
    }
    if spec.needs_groups() && train_split.groups.is_none() {
        return Err(IrcoError::InvalidInput(
            "problem requires group ids but the training split has none".into(),
        ));
    }
    let mut spec = spec.clone();
    spec.set_count_reference(train_split.len());
    let spec = &spec;

    let m = spec.m();
    let n = train_split.len();
    let slack_mode = cfg.inequality_mode == InequalityMode::Slack
        && spec.constraints.iter().any(|c| c.relation != Relation::Equals);

    let mut params = model::init(arch, rng::child_seed(cfg.seed, 0))?;
    let mut state = ThresholdState::new(m, slack_mode);
    let mut history = History::default();
    let mut best: Option<Snapshot> = None;
    let mut step: u64 = 0;

    // Warmup phase: plain cross-entropy descent with its own optimizer
    // state. Thresholds are refit exactly at epoch ends for bookkeeping and
    // snapshots only.
    if cfg.warmup_epochs > 0 {
        let mut warm_opt = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.theta.len());
        for epoch in 0..cfg.warmup_epochs {
            for batch_idx in epoch_batches(n, cfg.batch_size, cfg.seed, epoch) {
                let batch = train_split.subset(&batch_idx)?;
                let scores = model::forward(&params, &batch.features)?;
                let (_, d_score) = crate::baselines::cross_entropy_loss(&scores, &batch.labels)?;
                let grad = model::vjp(&params, &batch.features, &d_score)?;
                warm_opt.step(&mut params.theta, &grad)?;
                step += 1;
            }
            let train_scores = model::forward(&params, &train_split.features)?;
            let lambdas = problems::correct_thresholds(
                spec,
                &train_scores,
                &train_split.labels,
                train_split.groups.as_deref(),
            )?;
            let eval = problems::evaluate(
                spec,
                &train_scores,
                &train_split.labels,
                train_split.groups.as_deref(),
                &lambdas,
                &cfg.surrogate,
            )?;
            let residual = problems::worst_violation(
                spec,
                &train_scores,
                &train_split.labels,
                train_split.groups.as_deref(),
                &lambdas,
            )?;
            let val_scores = model::forward(&params, &val_split.features)?;
            let val_metric = problems::eval_metric(
                spec,
                &val_scores,
                &val_split.labels,
                val_split.groups.as_deref(),
            )?;
            history.rows.push(HistoryRow {
                epoch,
                step,
                train_objective: eval.objective,
                train_constraint_residual: residual,
                val_metric,
                lambdas: lambdas.clone(),
            });
            let better = match &best {
                None => true,
                Some(b) => {
                    if spec.metric_higher_is_better() {
                        val_metric > b.metric
                    } else {
                        val_metric < b.metric
                    }
                }
            };
            if better {
                best = Some(Snapshot {
                    params: params.clone(),
                    thresholds: ThresholdState {
                        lambdas,
                        slacks: slack_mode.then(|| vec![0.0; m]),
                    },
                    metric: val_metric,
                });
            }
        }
    }

    // Initial thresholds: exact solve on the first accumulation window, with
    // the whole split as fallback when that window misses a class or group.
    {
        let first: Vec<usize> = epoch_batches(n, cfg.batch_size, cfg.seed, cfg.warmup_epochs)
            .into_iter()
            .take(cfg.accumulation_k)
            .flatten()
            .collect();
        let sub = train_split.subset(&first)?;
        let scores = model::forward(&params, &sub.features)?;
        match problems::correct_thresholds(spec, &scores, &sub.labels, sub.groups.as_deref()) {
            Ok(lams) => state.lambdas = lams,
            Err(e) => {
                log::warn!("initial correction fell back to the full split: {e}");
                let scores = model::forward(&params, &train_split.features)?;
                state.lambdas = problems::correct_thresholds(
                    spec,
                    &scores,
                    &train_split.labels,
                    train_split.groups.as_deref(),
                )?;
            }
        }
        if slack_mode {
            reset_slacks(spec, &mut state, train_split, &params)?;
        }
    }

    let dim = params.theta.len() + if slack_mode { m } else { 0 };
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, dim);
    let mut accum: VecDeque<Vec<usize>> = VecDeque::with_capacity(cfg.accumulation_k);

    for epoch in cfg.warmup_epochs..cfg.warmup_epochs + cfg.epochs {
        for batch_idx in epoch_batches(n, cfg.batch_size, cfg.seed, epoch) {
            let batch = train_split.subset(&batch_idx)?;
            let ig = match implicit_gradient(
                spec,
                &params,
                &batch,
                &state,
                &cfg.surrogate,
                cfg.reg_strength,
                slack_mode,
            ) {
                Ok(ig) => Some(ig),
                Err(IrcoError::DegenerateConstraintSlope { index, slope }) => {
                    log::warn!(
                        "step {step}: constraint slope {slope:.3e} at threshold {index} under \
                         the floor; falling back to the direct objective gradient"
                    );
                    fallback_gradient(spec, &params, &batch, &state, cfg, slack_mode)?
                }
                Err(e) if batch_is_degenerate(&e) => {
                    log::warn!("step {step}: skipping degenerate batch: {e}");
                    None
                }
                Err(e) => return Err(e),
            };
            let Some(ig) = ig else { continue };

            // One flat coordinate vector: model parameters, then slacks.
            let mut grad = ig.g_theta.clone();
            let mut coords = params.theta.clone();
            if slack_mode {
                grad.extend_from_slice(ig.slack_grads.as_ref().expect("slack mode"));
                coords.extend_from_slice(state.slacks.as_ref().expect("slack mode"));
            }
            let delta = optimizer.step(&mut coords, &grad)?;
            let p = params.theta.len();
            params.theta.copy_from_slice(&coords[..p]);
            let delta_slack = if slack_mode {
                if let Some(s) = &mut state.slacks {
                    s.copy_from_slice(&coords[p..]);
                }
                Some(&delta[p..])
            } else {
                None
            };

            accum.push_back(batch_idx);
            if accum.len() > cfg.accumulation_k {
                accum.pop_front();
            }
            step += 1;

            if step % cfg.correction_period as u64 == 0 {
                let idx: Vec<usize> = accum.iter().flatten().copied().collect();
                let sub = train_split.subset(&idx)?;
                let scores = model::forward(&params, &sub.features)?;
                correction_step(
                    spec,
                    &mut state,
                    &scores,
                    &sub.labels,
                    sub.groups.as_deref(),
                    cfg.inequality_mode,
                );
            } else {
                threshold_gradient_update(&mut state, &ig, &delta[..p], delta_slack);
            }
            state.project_slacks();
        }

        // Epoch bookkeeping: full-split smoothed objective, worst unrelaxed
        // violation, validation metric with thresholds refit on validation.
        let train_scores = model::forward(&params, &train_split.features)?;
        let eval = problems::evaluate(
            spec,
            &train_scores,
            &train_split.labels,
            train_split.groups.as_deref(),
            &state.lambdas,
            &cfg.surrogate,
        )?;
        let residual = problems::worst_violation(
            spec,
            &train_scores,
            &train_split.labels,
            train_split.groups.as_deref(),
            &state.lambdas,
        )?;
        let val_scores = model::forward(&params, &val_split.features)?;
        let val_metric = problems::eval_metric(
            spec,
            &val_scores,
            &val_split.labels,
            val_split.groups.as_deref(),
        )?;
        history.rows.push(HistoryRow {
            epoch,
            step,
            train_objective: eval.objective,
            train_constraint_residual: residual,
            val_metric,
            lambdas: state.lambdas.clone(),
        });

        let better = match &best {
            None => true,
            Some(b) => {
                if spec.metric_higher_is_better() {
                    val_metric > b.metric
                } else {
                    val_metric < b.metric
                }
            }
        };
        if better {
            best = Some(Snapshot {
                params: params.clone(),
                thresholds: state.clone(),
                metric: val_metric,
            });
        }
    }

    if let Some(b) = best {
        params = b.params;
        state = b.thresholds;
    }

    // Final exact correction on the full training split.
    let scores = model::forward(&params, &train_split.features)?;
    correction_step(
        spec,
        &mut state,
        &scores,
        &train_split.labels,
        train_split.groups.as_deref(),
        cfg.inequality_mode,
    );

    Ok(TrainOutput {
        params,
        thresholds: state,
        history,
    })
}

/// Direct objective gradient (thresholds frozen), used when the implicit
/// system is degenerate. Keeps the slack coordinates inert.
fn fallback_gradient(
    spec: &ProblemSpec,
    params: &ModelParams,
    batch: &Dataset,
    state: &ThresholdState,
    cfg: &TrainerConfig,
    slack_mode: bool,
) -> Result<Option<ImplicitGradient>> {
    let scores = model::forward(params, &batch.features)?;
    let eval = match problems::evaluate(
        spec,
        &scores,
        &batch.labels,
        batch.groups.as_deref(),
        &state.lambdas,
        &cfg.surrogate,
    ) {
        Ok(e) => e,
        Err(e) if batch_is_degenerate(&e) => {
            log::warn!("fallback skipping degenerate batch: {e}");
            return Ok(None);
        }
        Err(e) => return Err(e),
    };
    let g_theta = model::vjp(params, &batch.features, &eval.obj_d_score)?;
    let m = spec.m();
    Ok(Some(ImplicitGradient {
        g_theta,
        f_dlambda: eval.obj_d_lambda,
        g_dlambda: vec![0.0; m],
        ratios: vec![0.0; m],
        h_grads: None,
        slack_grads: slack_mode.then(|| vec![0.0; m]),
        lambda_dslack: slack_mode.then(|| vec![0.0; m]),
    }))
}

fn reset_slacks(
    spec: &ProblemSpec,
    state: &mut ThresholdState,
    split: &Dataset,
    params: &ModelParams,
) -> Result<()> {
    let scores = model::forward(params, &split.features)?;
    let slacks = state.slacks.as_mut().expect("slack mode");
    for (ci, c) in spec.constraints.iter().enumerate() {
        if c.relation == Relation::Equals {
            continue;
        }
        let raw = problems::unrelaxed_residual(
            spec,
            ci,
            &scores,
            &split.labels,
            split.groups.as_deref(),
            state.lambdas[c.governed_threshold],
        )?;
        slacks[c.governed_threshold] = (-problems::oriented_residual(c.relation, raw)).max(0.0);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{self, GaussianSpec};
    use crate::matrix::Matrix;
    use crate::problems::{build_fnr_at_fpr, build_group_coverage_floor, build_pauc_roc};

    fn toy_batch(seed: u64, n: usize, d: usize) -> Dataset {
        let spec = GaussianSpec::spherical(vec![1.0; d], vec![-1.0; d], 1.0, 0.5);
        data::gen_gaussian(&spec, n, seed).unwrap()
    }

    fn surrogate() -> Surrogate {
        Surrogate::sigmoid(2.0).unwrap()
    }

    #[test]
    fn epoch_batches_fold_short_tails_into_the_last_batch() {
        let ragged = epoch_batches(2001, 200, 7, 0);
        assert_eq!(ragged.len(), 10);
        assert!(ragged[..9].iter().all(|b| b.len() == 200));
        assert_eq!(ragged[9].len(), 201);
        let mut seen: Vec<usize> = ragged.into_iter().flatten().collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..2001).collect::<Vec<_>>());

        let exact = epoch_batches(1000, 200, 7, 0);
        assert_eq!(exact.len(), 5);
        assert!(exact.iter().all(|b| b.len() == 200));

        let tiny = epoch_batches(37, 200, 7, 0);
        assert_eq!(tiny.len(), 1);
        assert_eq!(tiny[0].len(), 37);
    }

    #[test]
    fn sgd_step_is_plain_descent() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 2);
        let mut p = vec![0.0, 0.0];
        let delta = opt.step(&mut p, &[1.0, -1.0]).unwrap();
        assert_eq!(p, vec![-0.1, 0.1]);
        assert_eq!(delta, vec![-0.1, 0.1]);
    }

    #[test]
    fn adam_first_step_has_learning_rate_magnitude() {
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, 3);
        let mut p = vec![0.0; 3];
        opt.step(&mut p, &[5.0, -0.3, 1e-4]).unwrap();
        for (x, g) in p.iter().zip([5.0f64, -0.3, 1e-4]) {
            // Bias-corrected first step: -lr * g / (|g| + eps scaled).
            assert!((x.abs() - 0.01).abs() < 1e-5, "step {x} for gradient {g}");
            assert_eq!(x.signum(), -g.signum());
        }
    }

    #[test]
    fn adam_matches_a_reference_trajectory() {
        // Quadratic f(x) = 0.5 * x'x with gradient x, hand-stepped.
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.05, 2);
        let mut x = vec![1.0, -2.0];
        let (mut rm, mut rv) = (vec![0.0; 2], vec![0.0; 2]);
        let mut rx = x.clone();
        for t in 1..=25 {
            let g = x.clone();
            opt.step(&mut x, &g).unwrap();
            let rg = rx.clone();
            for i in 0..2 {
                rm[i] = 0.9 * rm[i] + 0.1 * rg[i];
                rv[i] = 0.999 * rv[i] + 0.001 * rg[i] * rg[i];
                let mhat = rm[i] / (1.0 - 0.9f64.powi(t));
                let vhat = rv[i] / (1.0 - 0.999f64.powi(t));
                rx[i] -= 0.05 * mhat / (vhat.sqrt() + 1e-8);
            }
            for i in 0..2 {
                assert!((x[i] - rx[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn adagrad_uses_the_seeded_accumulator() {
        let mut opt = Optimizer::new(OptimizerKind::Adagrad, 0.5, 1);
        let mut p = vec![0.0];
        opt.step(&mut p, &[1.0]).unwrap();
        // Accumulator 0.1 + 1.0 = 1.1.
        assert!((p[0] + 0.5 / 1.1f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_reports_divergence() {
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 1);
        let mut p = vec![0.0];
        assert!(matches!(
            opt.step(&mut p, &[f64::NAN]),
            Err(IrcoError::Divergence { .. })
        ));
    }

    #[test]
    fn implicit_gradient_matches_root_finding_finite_differences() {
        // Oracle: solve the smoothed constraint by bisection at probe points
        // and difference the composite objective.
        let spec = build_fnr_at_fpr(0.3).unwrap();
        let s = surrogate();
        for seed in 0..6u64 {
            let batch = toy_batch(seed, 160, 3);
            let arch = ArchSpec::linear(3, true);
            let params = model::init(&arch, seed + 50).unwrap();

            let solve = |p: &ModelParams| -> f64 {
                let scores = model::forward(p, &batch.features).unwrap();
                let g_at = |lam: f64| {
                    problems::evaluate(&spec, &scores, &batch.labels, None, &[lam], &s)
                        .unwrap()
                        .constraints[0]
                        .value
                };
                let (mut lo, mut hi) = (-60.0, 60.0);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    // FPR decreases in lambda.
                    if g_at(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                0.5 * (lo + hi)
            };
            let objective = |p: &ModelParams| -> f64 {
                let lam = solve(p);
                let scores = model::forward(p, &batch.features).unwrap();
                problems::evaluate(&spec, &scores, &batch.labels, None, &[lam], &s)
                    .unwrap()
                    .objective
            };

            let state = ThresholdState {
                lambdas: vec![solve(&params)],
                slacks: None,
            };
            let ig = implicit_gradient(&spec, &params, &batch, &state, &s, 0.0, false).unwrap();

            let mut fd = vec![0.0; params.theta.len()];
            let mut probe = params.clone();
            for j in 0..fd.len() {
                let h = 1e-5 * params.theta[j].abs().max(1.0);
                probe.theta[j] = params.theta[j] + h;
                let up = objective(&probe);
                probe.theta[j] = params.theta[j] - h;
                let dn = objective(&probe);
                probe.theta[j] = params.theta[j];
                fd[j] = (up - dn) / (2.0 * h);
            }
            let num: f64 = ig
                .g_theta
                .iter()
                .zip(&fd)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let den: f64 = ig.g_theta.iter().map(|a| a * a).sum::<f64>().sqrt();
            assert!(num / den < 1e-4, "seed {seed}: rel error {}", num / den);
        }
    }

    #[test]
    fn frozen_scores_make_the_implicit_part_vanish() {
        // A constraint insensitive to theta: all feature rows zero, bias off,
        // so scores are constants and grad_g = 0; G reduces to grad_f = 0 too.
        // Instead freeze by zero weight rows: use a batch whose feature block
        // is zero so every score gradient is zero.
        let spec = build_fnr_at_fpr(0.4).unwrap();
        let n = 30;
        let features = Matrix::zeros(n, 2);
        let labels: Vec<u8> = (0..n).map(|i| u8::from(i % 3 == 0)).collect();
        let ds = Dataset::new(features, labels, None).unwrap();
        let arch = ArchSpec::linear(2, false);
        let params = ModelParams {
            arch: arch.clone(),
            theta: vec![0.7, -0.4],
        };
        // All scores are exactly zero; pick a threshold off zero so the
        // surrogate has slope but scores do not move with theta.
        let state = ThresholdState {
            lambdas: vec![0.25],
            slacks: None,
        };
        let ig = implicit_gradient(&spec, &params, &ds, &state, &surrogate(), 0.0, false).unwrap();
        for (t, h) in ig.h_grads.as_ref().unwrap()[0].iter().enumerate() {
            assert_eq!(*h, 0.0, "h[{t}]");
        }
        assert!(ig.g_theta.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn combined_weights_match_the_naive_multi_pass_form() {
        let spec = build_pauc_roc(0.4, 5).unwrap();
        let s = surrogate();
        for seed in 0..5u64 {
            let batch = toy_batch(seed + 20, 120, 3);
            let arch = ArchSpec {
                input_dim: 3,
                hidden: vec![4],
                bias: true,
            };
            let params = model::init(&arch, seed).unwrap();
            let scores = model::forward(&params, &batch.features).unwrap();
            let lambdas =
                problems::correct_thresholds(&spec, &scores, &batch.labels, None).unwrap();
            let state = ThresholdState {
                lambdas,
                slacks: None,
            };
            let fast = implicit_gradient(&spec, &params, &batch, &state, &s, 0.0, false).unwrap();
            let naive = implicit_gradient_naive(&spec, &params, &batch, &state, &s).unwrap();
            for (a, b) in fast.g_theta.iter().zip(&naive) {
                assert!((a - b).abs() <= 1e-10 * a.abs().max(b.abs()).max(1.0));
            }
            assert!(fast.h_grads.is_none());
        }
    }

    #[test]
    fn regularizer_matches_finite_differences_and_folds_into_the_gradient() {
        let spec = build_fnr_at_fpr(0.35).unwrap();
        let s = surrogate();
        let batch = toy_batch(9, 80, 2);
        let arch = ArchSpec::linear(2, true);
        let params = model::init(&arch, 4).unwrap();
        let lambdas = vec![0.2];
        let strength = 0.7;

        let zero = regularizer_gradient(&spec, &params, &batch, &lambdas, &s, 0.0).unwrap();
        assert!(zero.iter().all(|&g| g == 0.0));

        let analytic =
            regularizer_gradient(&spec, &params, &batch, &lambdas, &s, strength).unwrap();
        let penalty = |p: &ModelParams| -> f64 {
            let scores = model::forward(p, &batch.features).unwrap();
            let e = problems::evaluate(&spec, &scores, &batch.labels, None, &lambdas, &s).unwrap();
            strength * e.constraints.iter().map(|c| c.d_lambda * c.d_lambda).sum::<f64>()
        };
        let mut probe = params.clone();
        for j in 0..params.theta.len() {
            let h = 1e-6 * params.theta[j].abs().max(1.0);
            probe.theta[j] = params.theta[j] + h;
            let up = penalty(&probe);
            probe.theta[j] = params.theta[j] - h;
            let dn = penalty(&probe);
            probe.theta[j] = params.theta[j];
            let fd = (up - dn) / (2.0 * h);
            let rel = (analytic[j] - fd).abs() / analytic[j].abs().max(fd.abs()).max(1e-8);
            assert!(rel < 1e-4, "coordinate {j}: rel {rel}");
        }

        // Folding: gradient with regularizer equals gradient without plus the
        // standalone penalty gradient.
        let state = ThresholdState {
            lambdas: lambdas.clone(),
            slacks: None,
        };
        let with = implicit_gradient(&spec, &params, &batch, &state, &s, strength, false).unwrap();
        let without = implicit_gradient(&spec, &params, &batch, &state, &s, 0.0, false).unwrap();
        for j in 0..analytic.len() {
            let folded = without.g_theta[j] + analytic[j];
            assert!((with.g_theta[j] - folded).abs() < 1e-12);
        }
    }

    #[test]
    fn threshold_update_is_identity_under_score_translation() {
        // A bias-only parameter step shifts every score by the same amount,
        // and the threshold must ride along exactly.
        let spec = build_fnr_at_fpr(0.3).unwrap();
        let batch = toy_batch(3, 60, 2);
        let arch = ArchSpec::linear(2, true);
        let params = model::init(&arch, 8).unwrap();
        let state0 = ThresholdState {
            lambdas: vec![0.1],
            slacks: None,
        };
        let ig =
            implicit_gradient(&spec, &params, &batch, &state0, &surrogate(), 0.0, false).unwrap();
        let c = 0.37;
        let delta = vec![0.0, 0.0, c];
        let mut state = state0.clone();
        threshold_gradient_update(&mut state, &ig, &delta, None);
        assert!((state.lambdas[0] - (0.1 + c)).abs() < 1e-12);

        // Zero step leaves thresholds alone.
        let mut state = state0.clone();
        threshold_gradient_update(&mut state, &ig, &[0.0, 0.0, 0.0], None);
        assert_eq!(state.lambdas[0], 0.1);
    }

    #[test]
    fn threshold_update_is_first_order_accurate() {
        let spec = build_fnr_at_fpr(0.3).unwrap();
        let s = surrogate();
        let batch = toy_batch(11, 150, 2);
        let arch = ArchSpec::linear(2, false);
        let params = model::init(&arch, 2).unwrap();
        let solve = |p: &ModelParams| -> f64 {
            let scores = model::forward(p, &batch.features).unwrap();
            let g_at = |lam: f64| {
                problems::evaluate(&spec, &scores, &batch.labels, None, &[lam], &s)
                    .unwrap()
                    .constraints[0]
                    .value
            };
            let (mut lo, mut hi) = (-60.0, 60.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if g_at(mid) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            0.5 * (lo + hi)
        };
        let lam0 = solve(&params);
        let state = ThresholdState {
            lambdas: vec![lam0],
            slacks: None,
        };
        let ig = implicit_gradient(&spec, &params, &batch, &state, &s, 0.0, false).unwrap();
        let dir = [0.8, -0.5];
        let mut errs = Vec::new();
        for k in 0..3 {
            let h = 0.2 / 2f64.powi(k);
            let mut stepped = params.clone();
            for (t, d) in stepped.theta.iter_mut().zip(dir) {
                *t += h * d;
            }
            let exact = solve(&stepped);
            let delta: Vec<f64> = dir.iter().map(|d| d * h).collect();
            let mut st = ThresholdState {
                lambdas: vec![lam0],
                slacks: None,
            };
            threshold_gradient_update(&mut st, &ig, &delta, None);
            errs.push((st.lambdas[0] - exact).abs());
        }
        // Halving the step should shrink the error at a second-order clip.
        assert!(errs[1] < errs[0] / 2.5, "{errs:?}");
        assert!(errs[2] < errs[1] / 2.5, "{errs:?}");
    }

    #[test]
    fn correction_resets_only_what_needs_it() {
        // Equality constraints always re-solve; satisfied inequalities stay.
        let scores: Vec<f64> = (0..20).map(|i| i as f64 / 20.0).collect();
        let labels: Vec<u8> = (0..20).map(|i| u8::from(i % 2 == 0)).collect();
        let groups: Vec<usize> = (0..20).map(|i| usize::from(i >= 10)).collect();
        let spec = build_group_coverage_floor(2, 0.5).unwrap();
        // Thresholds already generous: coverage 1.0 on both groups.
        let mut state = ThresholdState {
            lambdas: vec![-5.0, -5.0],
            slacks: None,
        };
        correction_step(&spec, &mut state, &scores, &labels, Some(&groups), InequalityMode::Search);
        assert_eq!(state.lambdas, vec![-5.0, -5.0]);
        // Starve group 1 and watch only that threshold move.
        state.lambdas = vec![-5.0, 5.0];
        correction_step(&spec, &mut state, &scores, &labels, Some(&groups), InequalityMode::Search);
        assert_eq!(state.lambdas[0], -5.0);
        assert!(state.lambdas[1] < 1.0);
        let cov = (10..20).filter(|&i| scores[i] > state.lambdas[1]).count();
        assert!(cov >= 5);
    }

    #[test]
    fn correction_keeps_previous_threshold_when_a_group_is_missing() {
        let spec = build_group_coverage_floor(2, 0.5).unwrap();
        let scores = [0.1, 0.9, 0.4];
        let labels = [0, 1, 1];
        // Group 1 absent from the accumulation.
        let groups = [0usize, 0, 0];
        let mut state = ThresholdState {
            lambdas: vec![9.0, 7.5],
            slacks: None,
        };
        correction_step(&spec, &mut state, &scores, &labels, Some(&groups), InequalityMode::Search);
        // Group 0 violated (coverage 0 at lambda 9) so it re-solves; group 1
        // cannot be checked or solved and keeps its threshold.
        assert!(state.lambdas[0] < 1.0);
        assert_eq!(state.lambdas[1], 7.5);
    }

    #[test]
    fn slack_mode_projects_and_resets_slacks() {
        let spec = build_group_coverage_floor(1, 0.5).unwrap();
        let scores = [0.9, 0.8, 0.7, 0.1];
        let labels = [1, 1, 0, 0];
        let groups = [0usize, 0, 0, 0];
        let mut state = ThresholdState::new(1, true);
        state.lambdas = vec![0.0];
        correction_step(&spec, &mut state, &scores, &labels, Some(&groups), InequalityMode::Slack);
        // Coverage at the corrected threshold is >= 0.5; slack absorbs the
        // overshoot (cov - 0.5).
        let cov = scores.iter().filter(|&&s| s > state.lambdas[0]).count() as f64 / 4.0;
        let slack = state.slacks.as_ref().unwrap()[0];
        assert!((slack - (cov - 0.5)).abs() < 1e-12);
        assert!(slack >= 0.0);

        state.slacks = Some(vec![-0.3]);
        state.project_slacks();
        assert_eq!(state.slacks.as_ref().unwrap()[0], 0.0);
    }

    #[test]
    fn training_history_is_deterministic_in_the_seed() {
        let ds = toy_batch(42, 400, 2);
        let parts = data::split(&ds, &[0.7, 0.3], 5).unwrap();
        let spec = build_fnr_at_fpr(0.2).unwrap();
        let cfg = TrainerConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.05,
            correction_period: 4,
            accumulation_k: 2,
            surrogate: surrogate(),
            reg_strength: 0.0,
            batch_size: 64,
            epochs: 3,
            warmup_epochs: 0,
            seed: 7,
            inequality_mode: InequalityMode::Search,
        };
        let arch = ArchSpec::linear(2, true);
        let a = train(&spec, &parts[0], &parts[1], &arch, &cfg).unwrap();
        let b = train(&spec, &parts[0], &parts[1], &arch, &cfg).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.theta, b.params.theta);
        assert_eq!(a.thresholds, b.thresholds);
        assert_eq!(a.history.rows.len(), 3);
        let csv = a.history.to_csv();
        assert!(csv.starts_with(
            "epoch,step,train_objective,train_constraint_residual,val_metric,lambda_0\n"
        ));
        assert_eq!(csv.lines().count(), 4);
    }

    #[test]
    fn separable_data_drives_fnr_to_zero() {
        // Positives and negatives linearly separated with a wide margin.
        let spec = GaussianSpec::spherical(vec![4.0, 4.0], vec![-4.0, -4.0], 0.25, 0.5);
        let ds = data::gen_gaussian(&spec, 600, 3).unwrap();
        let parts = data::split(&ds, &[0.67, 0.33], 1).unwrap();
        let problem = build_fnr_at_fpr(0.1).unwrap();
        let cfg = TrainerConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.1,
            correction_period: 5,
            accumulation_k: 3,
            surrogate: surrogate(),
            reg_strength: 0.0,
            batch_size: 100,
            epochs: 20,
            warmup_epochs: 0,
            seed: 11,
            inequality_mode: InequalityMode::Search,
        };
        let arch = ArchSpec::linear(2, true);
        let out = train(&problem, &parts[0], &parts[1], &arch, &cfg).unwrap();
        let scores = model::forward(&out.params, &parts[1].features).unwrap();
        let metric =
            problems::eval_metric_at(&problem, &scores, &parts[1].labels, None, &out.thresholds.lambdas)
                .unwrap();
        assert_eq!(metric, 0.0, "separable data must reach zero FNR");
    }

    #[test]
    fn feasibility_after_final_correction() {
        let ds = toy_batch(100, 900, 2);
        let parts = data::split(&ds, &[0.7, 0.3], 2).unwrap();
        let problem = build_fnr_at_fpr(0.15).unwrap();
        let cfg = TrainerConfig {
            optimizer: OptimizerKind::Adagrad,
            learning_rate: 0.05,
            correction_period: 6,
            accumulation_k: 3,
            surrogate: surrogate(),
            reg_strength: 0.01,
            batch_size: 90,
            epochs: 4,
            warmup_epochs: 0,
            seed: 3,
            inequality_mode: InequalityMode::Search,
        };
        let arch = ArchSpec::linear(2, true);
        let out = train(&problem, &parts[0], &parts[1], &arch, &cfg).unwrap();
        let scores = model::forward(&out.params, &parts[0].features).unwrap();
        let res = problems::unrelaxed_residual(
            &problem,
            0,
            &scores,
            &parts[0].labels,
            None,
            out.thresholds.lambdas[0],
        )
        .unwrap();
        let n_neg = parts[0].n_neg();
        assert!(
            res.abs() <= 1.0 / n_neg as f64 + 1e-12,
            "train residual {res} vs 1/{n_neg}"
        );
    }

    #[test]
    fn zero_epochs_returns_initialized_params_with_corrected_thresholds() {
        let ds = toy_batch(1, 200, 2);
        let parts = data::split(&ds, &[0.5, 0.5], 9).unwrap();
        let problem = build_fnr_at_fpr(0.2).unwrap();
        let cfg = TrainerConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.1,
            correction_period: 10,
            accumulation_k: 2,
            surrogate: surrogate(),
            reg_strength: 0.0,
            batch_size: 50,
            epochs: 0,
            warmup_epochs: 0,
            seed: 21,
            inequality_mode: InequalityMode::Search,
        };
        let arch = ArchSpec::linear(2, true);
        let out = train(&problem, &parts[0], &parts[1], &arch, &cfg).unwrap();
        let init = model::init(&arch, rng::child_seed(21, 0)).unwrap();
        assert_eq!(out.params.theta, init.theta);
        assert!(out.history.rows.is_empty());
        // Final correction ran on the full split.
        let scores = model::forward(&out.params, &parts[0].features).unwrap();
        let res = problems::unrelaxed_residual(
            &problem,
            0,
            &scores,
            &parts[0].labels,
            None,
            out.thresholds.lambdas[0],
        )
        .unwrap();
        assert!(res <= 0.0 && res > -1.0 / parts[0].n_neg() as f64 - 1e-12);
    }

    #[test]
    fn warmup_only_training_matches_the_cross_entropy_baseline() {
        // With zero constrained epochs the trainer reduces to plain
        // cross-entropy descent followed by an exact threshold solve, so it
        // must reproduce the baseline bit for bit.
        let ds = toy_batch(77, 300, 2);
        let parts = data::split(&ds, &[0.6, 0.4], 3).unwrap();
        let problem = build_fnr_at_fpr(0.2).unwrap();
        let arch = ArchSpec::linear(2, true);
        let mut cfg = TrainerConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.05,
            correction_period: 10,
            accumulation_k: 2,
            surrogate: surrogate(),
            reg_strength: 0.0,
            batch_size: 50,
            epochs: 0,
            warmup_epochs: 3,
            seed: 17,
            inequality_mode: InequalityMode::Search,
        };
        let warm = train(&problem, &parts[0], &parts[1], &arch, &cfg).unwrap();
        cfg.epochs = 3;
        cfg.warmup_epochs = 0;
        let ce = crate::baselines::train_cross_entropy(&problem, &parts[0], &parts[1], &arch, &cfg)
            .unwrap();
        assert_eq!(warm.params.theta, ce.params.theta);
        assert_eq!(warm.thresholds.lambdas, ce.thresholds.lambdas);
        let warm_vals: Vec<f64> = warm.history.rows.iter().map(|r| r.val_metric).collect();
        let ce_vals: Vec<f64> = ce.history.rows.iter().map(|r| r.val_metric).collect();
        assert_eq!(warm_vals, ce_vals);
    }

    #[test]
    fn warmup_rows_precede_the_constrained_phase() {
        let ds = toy_batch(5, 240, 2);
        let parts = data::split(&ds, &[0.5, 0.5], 8).unwrap();
        let problem = build_fnr_at_fpr(0.2).unwrap();
        let arch = ArchSpec::linear(2, true);
        let cfg = TrainerConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.05,
            correction_period: 4,
            accumulation_k: 2,
            surrogate: surrogate(),
            reg_strength: 0.0,
            batch_size: 40,
            epochs: 2,
            warmup_epochs: 2,
            seed: 13,
            inequality_mode: InequalityMode::Search,
        };
        let out = train(&problem, &parts[0], &parts[1], &arch, &cfg).unwrap();
        assert_eq!(out.history.rows.len(), 4);
        let epochs: Vec<usize> = out.history.rows.iter().map(|r| r.epoch).collect();
        assert_eq!(epochs, vec![0, 1, 2, 3]);
        // The step counter is cumulative across both phases.
        let steps: Vec<u64> = out.history.rows.iter().map(|r| r.step).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]), "{steps:?}");
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = TrainerConfig {
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.1,
            correction_period: 1,
            accumulation_k: 1,
            surrogate: surrogate(),
            reg_strength: 0.0,
            batch_size: 10,
            epochs: 1,
            warmup_epochs: 0,
            seed: 0,
            inequality_mode: InequalityMode::Search,
        };
        cfg.validate().unwrap();
        cfg.learning_rate = 0.0;
        assert!(cfg.validate().is_err());
        cfg.learning_rate = 0.1;
        cfg.correction_period = 0;
        assert!(cfg.validate().is_err());
        cfg.correction_period = 1;
        cfg.reg_strength = -1.0;
        assert!(cfg.validate().is_err());
    }
}
