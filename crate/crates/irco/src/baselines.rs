//! Reference trainers the constrained loop is measured against.
//!
//! Three methods share the constrained trainer's data pipeline, optimizer,
//! model-selection protocol, and output shape, so comparisons isolate the
//! training signal itself:
//!
//! * plain cross-entropy on the labels, constraints ignored until evaluation;
//! * a Lagrangian that descends the smoothed objective plus multiplier-
//!   weighted smoothed residuals over model parameters and thresholds
//!   jointly, with dual ascent on raw minibatch residuals;
//! * a pairwise partial-area loss that penalizes each positive against the
//!   highest-scoring negatives in the batch.
//!
//! Every trainer returns thresholds re-solved exactly on the full training
//! split so downstream evaluation treats all methods identically.

use crate::data::Dataset;
use crate::error::{IrcoError, Result};
use crate::ico::{self, History, HistoryRow, Optimizer, ThresholdState, TrainOutput, TrainerConfig};
use crate::model::{self, ArchSpec, ModelParams};
use crate::problems::{self, ProblemKind, ProblemSpec, Relation};
use crate::rng;
use crate::surrogates::Surrogate;

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable log(1 + exp(z)).
fn log1pexp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Mean logistic loss and its per-example score derivative.
pub fn cross_entropy_loss(scores: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(IrcoError::DimensionMismatch {
            context: "cross-entropy batch",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if scores.is_empty() {
        return Err(IrcoError::EmptyBatch {
            context: "cross-entropy loss",
        });
    }
    let n = scores.len() as f64;
    let mut loss = 0.0;
    let mut d = vec![0.0; scores.len()];
    for (i, (&s, &y)) in scores.iter().zip(labels).enumerate() {
        loss += if y == 1 { log1pexp(-s) } else { log1pexp(s) };
        d[i] = (sigmoid(s) - f64::from(y)) / n;
    }
    Ok((loss / n, d))
}

struct Snapshot {
    params: ModelParams,
    metric: f64,
}

fn better(spec: &ProblemSpec, candidate: f64, best: Option<&Snapshot>) -> bool {
    match best {
        None => true,
        Some(b) => {
            if spec.metric_higher_is_better() {
                candidate > b.metric
            } else {
                candidate < b.metric
            }
        }
    }
}

fn epoch_row(
    spec: &ProblemSpec,
    params: &ModelParams,
    train: &Dataset,
    val: &Dataset,
    epoch: usize,
    step: u64,
    train_objective: f64,
) -> Result<HistoryRow> {
    let train_scores = model::forward(params, &train.features)?;
    let lambdas =
        problems::correct_thresholds(spec, &train_scores, &train.labels, train.groups.as_deref())?;
    let residual = problems::worst_violation(
        spec,
        &train_scores,
        &train.labels,
        train.groups.as_deref(),
        &lambdas,
    )?;
    let val_scores = model::forward(params, &val.features)?;
    let val_metric =
        problems::eval_metric(spec, &val_scores, &val.labels, val.groups.as_deref())?;
    Ok(HistoryRow {
        epoch,
        step,
        train_objective,
        train_constraint_residual: residual,
        val_metric,
        lambdas,
    })
}

/// Shared tail of every baseline: restore the best-validation iterate and
/// attach thresholds solved exactly on the full training split.
fn finish(
    spec: &ProblemSpec,
    mut params: ModelParams,
    best: Option<Snapshot>,
    train: &Dataset,
    history: History,
) -> Result<TrainOutput> {
    if let Some(b) = best {
        params = b.params;
    }
    let scores = model::forward(&params, &train.features)?;
    let lambdas =
        problems::correct_thresholds(spec, &scores, &train.labels, train.groups.as_deref())?;
    Ok(TrainOutput {
        params,
        thresholds: ThresholdState {
            lambdas,
            slacks: None,
        },
        history,
    })
}

fn check_split(spec: &ProblemSpec, train: &Dataset) -> Result<()> {
    spec.validate()?;
    if !train.labels.iter().any(|&l| l == 1) || !train.labels.iter().any(|&l| l == 0) {
        return Err(IrcoError::SingleClassBatch {
            context: "training split",
        });
    }
    if spec.needs_groups() && train.groups.is_none() {
        return Err(IrcoError::InvalidInput(
            "problem requires group ids but the training split has none".into(),
        ));
    }
    Ok(())
}

/// Plain cross-entropy training; the problem spec is used only for
/// validation-metric model selection and the final threshold solve.
pub fn train_cross_entropy(
    spec: &ProblemSpec,
    train: &Dataset,
    val: &Dataset,
    arch: &ArchSpec,
    cfg: &TrainerConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_split(spec, train)?;
    let mut spec = spec.clone();
    spec.set_count_reference(train.len());
    let spec = &spec;

    let mut params = model::init(arch, rng::child_seed(cfg.seed, 0))?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.theta.len());
    let mut history = History::default();
    let mut best: Option<Snapshot> = None;
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        for batch_idx in ico::epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch) {
            let batch = train.subset(&batch_idx)?;
            let scores = model::forward(&params, &batch.features)?;
            let (_, d_score) = cross_entropy_loss(&scores, &batch.labels)?;
            let grad = model::vjp(&params, &batch.features, &d_score)?;
            optimizer.step(&mut params.theta, &grad)?;
            step += 1;
        }
        let train_scores = model::forward(&params, &train.features)?;
        let (loss, _) = cross_entropy_loss(&train_scores, &train.labels)?;
        let row = epoch_row(spec, &params, train, val, epoch, step, loss)?;
        if better(spec, row.val_metric, best.as_ref()) {
            best = Some(Snapshot {
                params: params.clone(),
                metric: row.val_metric,
            });
        }
        history.rows.push(row);
    }
    finish(spec, params, best, train, history)
}

/// Primal-dual Lagrangian. The primal step descends
/// `f + sum_i mu_i * c_i` over model parameters and thresholds jointly,
/// where `c_i` is the oriented smoothed residual; the dual step ascends the
/// multipliers along the raw minibatch residuals, clipping inequality
/// multipliers at zero.
pub fn train_lagrangian(
    spec: &ProblemSpec,
    train: &Dataset,
    val: &Dataset,
    arch: &ArchSpec,
    cfg: &TrainerConfig,
    dual_step: f64,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_split(spec, train)?;
    if !(dual_step > 0.0 && dual_step.is_finite()) {
        return Err(IrcoError::Config(format!(
            "dual_step must be positive and finite, got {dual_step}"
        )));
    }
    let mut spec_local = spec.clone();
    spec_local.set_count_reference(train.len());
    let spec = &spec_local;
    let m = spec.m();

    let mut params = model::init(arch, rng::child_seed(cfg.seed, 0))?;
    // Thresholds start from an exact solve so the primal search begins near
    // the feasible manifold.
    let mut lambdas = {
        let scores = model::forward(&params, &train.features)?;
        problems::correct_thresholds(spec, &scores, &train.labels, train.groups.as_deref())?
    };
    let mut mu = vec![0.0; spec.constraints.len()];
    let p = params.theta.len();
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, p + m);
    let mut history = History::default();
    let mut best: Option<Snapshot> = None;
    let mut step: u64 = 0;

    // Orientation sign per constraint: +1 keeps the raw residual, -1 flips
    // at-least constraints so positive means violated.
    let signs: Vec<f64> = spec
        .constraints
        .iter()
        .map(|c| match c.relation {
            Relation::AtLeast => -1.0,
            _ => 1.0,
        })
        .collect();

    for epoch in 0..cfg.epochs {
        for batch_idx in ico::epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch) {
            let batch = train.subset(&batch_idx)?;
            let scores = model::forward(&params, &batch.features)?;
            let eval = match problems::evaluate(
                spec,
                &scores,
                &batch.labels,
                batch.groups.as_deref(),
                &lambdas,
                &cfg.surrogate,
            ) {
                Ok(e) => e,
                Err(e) if batch_degenerate(&e) => {
                    log::warn!("lagrangian step {step}: skipping degenerate batch: {e}");
                    continue;
                }
                Err(e) => return Err(e),
            };

            // Primal gradient: fold multiplier-weighted constraint weights
            // into one backward pass; thresholds get their own coordinates.
            let mut weights = eval.obj_d_score.clone();
            let mut lambda_grad = eval.obj_d_lambda.clone();
            for (ci, c) in spec.constraints.iter().enumerate() {
                let scale = mu[ci] * signs[ci];
                for (w, d) in weights.iter_mut().zip(&eval.constraints[ci].d_score) {
                    *w += scale * d;
                }
                lambda_grad[c.governed_threshold] += scale * eval.constraints[ci].d_lambda;
            }
            let theta_grad = model::vjp(&params, &batch.features, &weights)?;
            let mut coords = params.theta.clone();
            coords.extend_from_slice(&lambdas);
            let mut grad = theta_grad;
            grad.extend_from_slice(&lambda_grad);
            optimizer.step(&mut coords, &grad)?;
            params.theta.copy_from_slice(&coords[..p]);
            lambdas.copy_from_slice(&coords[p..]);

            // Dual ascent on raw counts.
            let scores = model::forward(&params, &batch.features)?;
            for (ci, c) in spec.constraints.iter().enumerate() {
                match problems::unrelaxed_residual(
                    spec,
                    ci,
                    &scores,
                    &batch.labels,
                    batch.groups.as_deref(),
                    lambdas[c.governed_threshold],
                ) {
                    Ok(raw) => {
                        mu[ci] += dual_step * signs[ci] * raw;
                        if c.relation != Relation::Equals && mu[ci] < 0.0 {
                            mu[ci] = 0.0;
                        }
                    }
                    Err(e) => log::warn!("dual update skipped for constraint {ci}: {e}"),
                }
            }
            step += 1;
        }

        let train_scores = model::forward(&params, &train.features)?;
        let eval = problems::evaluate(
            spec,
            &train_scores,
            &train.labels,
            train.groups.as_deref(),
            &lambdas,
            &cfg.surrogate,
        )?;
        let residual = problems::worst_violation(
            spec,
            &train_scores,
            &train.labels,
            train.groups.as_deref(),
            &lambdas,
        )?;
        let val_scores = model::forward(&params, &val.features)?;
        let val_metric =
            problems::eval_metric(spec, &val_scores, &val.labels, val.groups.as_deref())?;
        if better(spec, val_metric, best.as_ref()) {
            best = Some(Snapshot {
                params: params.clone(),
                metric: val_metric,
            });
        }
        history.rows.push(HistoryRow {
            epoch,
            step,
            train_objective: eval.objective,
            train_constraint_residual: residual,
            val_metric,
            lambdas: lambdas.clone(),
        });
    }
    finish(spec, params, best, train, history)
}

fn batch_degenerate(e: &IrcoError) -> bool {
    matches!(
        e,
        IrcoError::UndefinedRate { .. }
            | IrcoError::EmptyBatch { .. }
            | IrcoError::SingleClassBatch { .. }
            | IrcoError::DegenerateDenominator { .. }
    )
}

/// Pairwise partial-area loss on one batch: every positive is compared with
/// the `ceil(beta * n_neg)` highest-scoring negatives, and each pair pays
/// `sigma_tau(s_neg - s_pos)`. Returns the loss and its per-example score
/// derivative.
pub fn pairwise_pauc_loss(
    scores: &[f64],
    labels: &[u8],
    beta: f64,
    surrogate: &Surrogate,
) -> Result<(f64, Vec<f64>)> {
    if scores.len() != labels.len() {
        return Err(IrcoError::DimensionMismatch {
            context: "pairwise loss batch",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(IrcoError::Config(format!(
            "pairwise loss needs beta in (0, 1], got {beta}"
        )));
    }
    let pos: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] == 1).collect();
    let mut neg: Vec<usize> = (0..scores.len()).filter(|&i| labels[i] == 0).collect();
    if pos.is_empty() || neg.is_empty() {
        return Err(IrcoError::SingleClassBatch {
            context: "pairwise loss",
        });
    }
    let keep = ((beta * neg.len() as f64).ceil() as usize).clamp(1, neg.len());
    // Top scoring negatives; full sort keeps the selection deterministic for
    // tied scores.
    neg.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b)));
    neg.truncate(keep);

    let scale = 1.0 / (pos.len() as f64 * keep as f64);
    let mut loss = 0.0;
    let mut d = vec![0.0; scores.len()];
    for &i in &pos {
        for &j in &neg {
            let diff = scores[j] - scores[i];
            loss += surrogate.value(diff);
            let g = surrogate.d1(diff);
            d[j] += scale * g;
            d[i] -= scale * g;
        }
    }
    Ok((loss * scale, d))
}

/// Trains a scorer by minimizing the pairwise partial-area loss. The problem
/// must target the region under the initial part of the score-ranking curve;
/// its `beta` sets the negative quantile entering the loss.
pub fn train_pairwise(
    spec: &ProblemSpec,
    train: &Dataset,
    val: &Dataset,
    arch: &ArchSpec,
    cfg: &TrainerConfig,
) -> Result<TrainOutput> {
    cfg.validate()?;
    check_split(spec, train)?;
    let ProblemKind::PaucRoc { beta, .. } = spec.kind else {
        return Err(IrcoError::Config(
            "the pairwise trainer only applies to the partial-area problem over false positive \
             budgets"
                .into(),
        ));
    };
    let mut spec_local = spec.clone();
    spec_local.set_count_reference(train.len());
    let spec = &spec_local;

    let mut params = model::init(arch, rng::child_seed(cfg.seed, 0))?;
    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate, params.theta.len());
    let mut history = History::default();
    let mut best: Option<Snapshot> = None;
    let mut step: u64 = 0;

    for epoch in 0..cfg.epochs {
        for batch_idx in ico::epoch_batches(train.len(), cfg.batch_size, cfg.seed, epoch) {
            let batch = train.subset(&batch_idx)?;
            let scores = model::forward(&params, &batch.features)?;
            let (_, d_score) = match pairwise_pauc_loss(&scores, &batch.labels, beta, &cfg.surrogate)
            {
                Ok(v) => v,
                Err(e) if batch_degenerate(&e) => {
                    log::warn!("pairwise step {step}: skipping degenerate batch: {e}");
                    continue;
                }
                Err(e) => return Err(e),
            };
            let grad = model::vjp(&params, &batch.features, &d_score)?;
            optimizer.step(&mut params.theta, &grad)?;
            step += 1;
        }
        let train_scores = model::forward(&params, &train.features)?;
        let (loss, _) = pairwise_pauc_loss(&train_scores, &train.labels, beta, &cfg.surrogate)?;
        let row = epoch_row(spec, &params, train, val, epoch, step, loss)?;
        if better(spec, row.val_metric, best.as_ref()) {
            best = Some(Snapshot {
                params: params.clone(),
                metric: row.val_metric,
            });
        }
        history.rows.push(row);
    }
    finish(spec, params, best, train, history)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{self, GaussianSpec};
    use crate::ico::{InequalityMode, OptimizerKind};
    use crate::problems::{build_fnr_at_fpr, build_pauc_roc};

    fn cfg(epochs: usize, seed: u64) -> TrainerConfig {
        TrainerConfig {
            optimizer: OptimizerKind::Adam,
            learning_rate: 0.05,
            correction_period: 10,
            accumulation_k: 2,
            surrogate: Surrogate::sigmoid(2.0).unwrap(),
            reg_strength: 0.0,
            batch_size: 64,
            epochs,
            warmup_epochs: 0,
            seed,
            inequality_mode: InequalityMode::Search,
        }
    }

    #[test]
    fn cross_entropy_loss_matches_hand_values() {
        // Scores 0 give loss ln 2 regardless of label.
        let (loss, d) = cross_entropy_loss(&[0.0, 0.0], &[0, 1]).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-15);
        assert!((d[0] - 0.25).abs() < 1e-15);
        assert!((d[1] + 0.25).abs() < 1e-15);
        // Confident correct predictions cost almost nothing.
        let (loss, _) = cross_entropy_loss(&[40.0, -40.0], &[1, 0]).unwrap();
        assert!(loss < 1e-15);
        // Confident wrong predictions cost about the margin.
        let (loss, _) = cross_entropy_loss(&[-30.0], &[1]).unwrap();
        assert!((loss - 30.0).abs() < 1e-9);
    }

    #[test]
    fn cross_entropy_gradient_matches_finite_differences() {
        let scores = [0.3, -1.2, 2.0, 0.0, -0.4];
        let labels = [1u8, 0, 1, 0, 1];
        let (_, d) = cross_entropy_loss(&scores, &labels).unwrap();
        let mut probe = scores;
        for j in 0..scores.len() {
            let h = 1e-6;
            probe[j] = scores[j] + h;
            let up = cross_entropy_loss(&probe, &labels).unwrap().0;
            probe[j] = scores[j] - h;
            let dn = cross_entropy_loss(&probe, &labels).unwrap().0;
            probe[j] = scores[j];
            let fd = (up - dn) / (2.0 * h);
            assert!((d[j] - fd).abs() < 1e-8, "coordinate {j}");
        }
    }

    #[test]
    fn cross_entropy_learns_a_separable_problem() {
        let spec = GaussianSpec::spherical(vec![2.0, 2.0], vec![-2.0, -2.0], 0.25, 0.5);
        let ds = data::gen_gaussian(&spec, 500, 7).unwrap();
        let parts = data::split(&ds, &[0.7, 0.3], 3).unwrap();
        let problem = build_fnr_at_fpr(0.1).unwrap();
        let arch = ArchSpec::linear(2, true);
        let out =
            train_cross_entropy(&problem, &parts[0], &parts[1], &arch, &cfg(15, 5)).unwrap();
        let scores = model::forward(&out.params, &parts[1].features).unwrap();
        let metric =
            problems::eval_metric(&problem, &scores, &parts[1].labels, None).unwrap();
        assert_eq!(metric, 0.0, "separable data must reach zero FNR");
        assert_eq!(out.history.rows.len(), 15);
    }

    #[test]
    fn pairwise_loss_is_translation_invariant_and_matches_finite_differences() {
        let scores = [1.2, -0.3, 0.8, 0.1, -1.0, 0.4, 2.0, -0.6];
        let labels = [1u8, 0, 1, 0, 0, 1, 0, 0];
        let s = Surrogate::sigmoid(3.0).unwrap();
        let (loss, d) = pairwise_pauc_loss(&scores, &labels, 0.5, &s).unwrap();
        let shifted: Vec<f64> = scores.iter().map(|v| v + 17.5).collect();
        let (loss2, d2) = pairwise_pauc_loss(&shifted, &labels, 0.5, &s).unwrap();
        assert!((loss - loss2).abs() < 1e-12);
        for (a, b) in d.iter().zip(&d2) {
            assert!((a - b).abs() < 1e-12);
        }

        let mut probe = scores;
        for j in 0..scores.len() {
            let h = 1e-6;
            probe[j] = scores[j] + h;
            let up = pairwise_pauc_loss(&probe, &labels, 0.5, &s).unwrap().0;
            probe[j] = scores[j] - h;
            let dn = pairwise_pauc_loss(&probe, &labels, 0.5, &s).unwrap().0;
            probe[j] = scores[j];
            let fd = (up - dn) / (2.0 * h);
            assert!((d[j] - fd).abs() < 1e-7, "coordinate {j}: {} vs {}", d[j], fd);
        }
    }

    #[test]
    fn pairwise_loss_keeps_the_hardest_negatives() {
        // beta small enough to keep only the single top negative.
        let scores = [0.0, 5.0, -5.0, 1.0];
        let labels = [1u8, 0, 0, 1];
        let s = Surrogate::sigmoid(1.0).unwrap();
        let (_, d) = pairwise_pauc_loss(&scores, &labels, 0.4, &s).unwrap();
        // The low negative is outside the kept set and gets no gradient.
        assert_eq!(d[2], 0.0);
        assert!(d[1] > 0.0);
        assert!(d[0] < 0.0 && d[3] < 0.0);
    }

    #[test]
    fn pairwise_trainer_requires_the_matching_problem() {
        let ds = data::gen_gaussian(
            &GaussianSpec::spherical(vec![1.0], vec![-1.0], 1.0, 0.5),
            100,
            1,
        )
        .unwrap();
        let parts = data::split(&ds, &[0.5, 0.5], 1).unwrap();
        let problem = build_fnr_at_fpr(0.1).unwrap();
        let arch = ArchSpec::linear(1, true);
        assert!(matches!(
            train_pairwise(&problem, &parts[0], &parts[1], &arch, &cfg(1, 1)),
            Err(IrcoError::Config(_))
        ));
    }

    #[test]
    fn pairwise_trainer_improves_partial_area() {
        let spec = GaussianSpec::spherical(vec![1.5, 0.5], vec![-0.5, 0.5], 1.0, 0.4);
        let ds = data::gen_gaussian(&spec, 800, 13).unwrap();
        let parts = data::split(&ds, &[0.7, 0.3], 2).unwrap();
        let problem = build_pauc_roc(0.3, 5).unwrap();
        let arch = ArchSpec::linear(2, true);
        let out = train_pairwise(&problem, &parts[0], &parts[1], &arch, &cfg(12, 9)).unwrap();
        let init = model::init(&arch, rng::child_seed(9, 0)).unwrap();
        let scores_init = model::forward(&init, &parts[1].features).unwrap();
        let scores_out = model::forward(&out.params, &parts[1].features).unwrap();
        let before =
            problems::eval_metric(&problem, &scores_init, &parts[1].labels, None).unwrap();
        let after = problems::eval_metric(&problem, &scores_out, &parts[1].labels, None).unwrap();
        assert!(
            after > before,
            "partial area should improve: {before} -> {after}"
        );
    }

    #[test]
    fn lagrangian_reaches_feasible_thresholds_on_easy_data() {
        let spec = GaussianSpec::spherical(vec![2.0, 2.0], vec![-2.0, -2.0], 0.5, 0.5);
        let ds = data::gen_gaussian(&spec, 600, 21).unwrap();
        let parts = data::split(&ds, &[0.7, 0.3], 4).unwrap();
        let problem = build_fnr_at_fpr(0.2).unwrap();
        let arch = ArchSpec::linear(2, true);
        let out =
            train_lagrangian(&problem, &parts[0], &parts[1], &arch, &cfg(10, 3), 0.5).unwrap();
        // Final thresholds come from an exact solve, so the train residual is
        // within one count of the target.
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
        assert!(res.abs() <= 1.0 / parts[0].n_neg() as f64 + 1e-12);
        assert_eq!(out.history.rows.len(), 10);
    }

    #[test]
    fn lagrangian_rejects_bad_dual_step() {
        let ds = data::gen_gaussian(
            &GaussianSpec::spherical(vec![1.0], vec![-1.0], 1.0, 0.5),
            100,
            2,
        )
        .unwrap();
        let parts = data::split(&ds, &[0.5, 0.5], 8).unwrap();
        let problem = build_fnr_at_fpr(0.1).unwrap();
        let arch = ArchSpec::linear(1, true);
        assert!(train_lagrangian(&problem, &parts[0], &parts[1], &arch, &cfg(1, 1), 0.0).is_err());
    }

    #[test]
    fn baseline_training_is_deterministic() {
        let spec = GaussianSpec::spherical(vec![1.0, 0.0], vec![0.0, 1.0], 1.0, 0.5);
        let ds = data::gen_gaussian(&spec, 300, 5).unwrap();
        let parts = data::split(&ds, &[0.7, 0.3], 6).unwrap();
        let problem = build_fnr_at_fpr(0.25).unwrap();
        let arch = ArchSpec::linear(2, true);
        let a = train_cross_entropy(&problem, &parts[0], &parts[1], &arch, &cfg(4, 2)).unwrap();
        let b = train_cross_entropy(&problem, &parts[0], &parts[1], &arch, &cfg(4, 2)).unwrap();
        assert_eq!(a.params.theta, b.params.theta);
        assert_eq!(a.history, b.history);
    }
}
