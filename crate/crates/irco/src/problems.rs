//! Problem families: each pairs a smoothed objective over one or more
//! decision thresholds with the constraints that pin those thresholds down,
//! plus the exact rule used to reset each threshold from raw counts.
//!
//! Constraint `i` governs threshold `i` and nothing else, so the Jacobian of
//! the constraint vector in the thresholds is diagonal. Everything downstream
//! (per-constraint slope ratios, one-threshold-at-a-time correction) leans on
//! that structure.

use serde::{Deserialize, Serialize};

use crate::error::{IrcoError, Result};
use crate::metrics::{self, RateKind, Sense};
use crate::surrogates::{self, Surrogate};

// ---------------------------------------------------------------------------
// Specification types
// ---------------------------------------------------------------------------

/// How a constraint's function relates to its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Relation {
    Equals,
    AtMost,
    AtLeast,
}

/// The quantity on the left-hand side of a constraint.
///
/// `PredictedPositiveCount` is un-normalized (a count, not a rate); it exists
/// for top-K style problems where the budget is stated in examples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ConstraintFunc {
    Rate(RateKind),
    PredictedPositiveCount,
}

/// Exact (non-smooth) rule that recomputes a threshold from raw counts.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CorrectionRule {
    Rate {
        kind: RateKind,
        target: f64,
        sense: Sense,
    },
    TopCount {
        k: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintSpec {
    pub func: ConstraintFunc,
    pub target: f64,
    pub relation: Relation,
    /// Index of the threshold this constraint governs; the map from
    /// constraints to thresholds must be a bijection.
    pub governed_threshold: usize,
    pub correction: CorrectionRule,
}

/// Smoothed training objective.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Objective {
    /// Mean of one smoothed rate across every governed threshold, optionally
    /// negated so that lower is always better for the trainer.
    MeanRate { kind: RateKind, negate: bool },
    /// Smoothed misclassification rate where each example is thresholded at
    /// its own group's threshold.
    GroupErrorRate,
}

/// Problem family tag, also the config-file encoding.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemKind {
    /// Minimize false negatives subject to a false-positive budget.
    FnrAtFpr { beta: f64 },
    /// Maximize precision at a fixed recall.
    PrecAtRecall { beta: f64 },
    /// Maximize precision with a fixed number of positive predictions.
    PrecAtK { k: usize },
    /// Maximize partial ROC area over the false-positive range (0, beta].
    PaucRoc { beta: f64, grid_m: usize },
    /// Maximize mean precision over the recall range [beta, 1].
    PaucPr { beta: f64, grid_m: usize },
    /// Minimize classification error with per-group thresholds, each group's
    /// positive-prediction share held at or above a floor.
    GroupCoverageFloor { num_groups: usize, floor: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProblemSpec {
    pub kind: ProblemKind,
    pub objective: Objective,
    pub constraints: Vec<ConstraintSpec>,
    /// When set, threshold `i` applies only to examples of group `i`.
    pub per_group: bool,
    /// Population that count-form targets refer to. Count targets are scaled
    /// by `batch_len / count_reference` so minibatch evaluations stay
    /// commensurate with the dataset-level budget.
    count_reference: Option<usize>,
}

impl ProblemSpec {
    /// Number of thresholds (equals the number of constraints).
    pub fn m(&self) -> usize {
        self.constraints.len()
    }

    pub fn needs_groups(&self) -> bool {
        self.per_group
    }

    /// Declares the population the problem's count targets were stated for.
    pub fn set_count_reference(&mut self, n: usize) {
        if self
            .constraints
            .iter()
            .any(|c| c.func == ConstraintFunc::PredictedPositiveCount)
        {
            self.count_reference = Some(n);
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = self.m();
        if m == 0 {
            return Err(IrcoError::InvalidInput(
                "problem must carry at least one constraint".into(),
            ));
        }
        let mut seen = vec![false; m];
        for c in &self.constraints {
            if c.governed_threshold >= m || seen[c.governed_threshold] {
                return Err(IrcoError::InvalidInput(format!(
                    "constraint-to-threshold map must be a bijection; threshold {} is {}",
                    c.governed_threshold,
                    if c.governed_threshold >= m {
                        "out of range"
                    } else {
                        "governed twice"
                    }
                )));
            }
            seen[c.governed_threshold] = true;
            if !c.target.is_finite() {
                return Err(IrcoError::InvalidInput(format!(
                    "constraint target must be finite, got {}",
                    c.target
                )));
            }
        }
        Ok(())
    }

    /// Constraint indices ordered by the threshold they govern.
    fn by_threshold(&self) -> Vec<usize> {
        let mut order = vec![0usize; self.m()];
        for (ci, c) in self.constraints.iter().enumerate() {
            order[c.governed_threshold] = ci;
        }
        order
    }

    /// Count targets are stated for `count_reference` examples; rate targets
    /// are scale-free.
    fn scaled_target(&self, c: &ConstraintSpec, batch_len: usize) -> f64 {
        match (c.func, self.count_reference) {
            (ConstraintFunc::PredictedPositiveCount, Some(nr)) if nr > 0 => {
                c.target * batch_len as f64 / nr as f64
            }
            _ => c.target,
        }
    }

    /// Short key naming the problem's evaluation metric in reports.
    pub fn metric_name(&self) -> &'static str {
        match self.kind {
            ProblemKind::FnrAtFpr { .. } => "fnr",
            ProblemKind::PrecAtRecall { .. } | ProblemKind::PrecAtK { .. } => "precision",
            ProblemKind::PaucRoc { .. } => "pauc_roc_mcclish",
            ProblemKind::PaucPr { .. } => "avg_precision",
            ProblemKind::GroupCoverageFloor { .. } => "error_rate",
        }
    }

    /// Orientation of the evaluation metric for model selection.
    pub fn metric_higher_is_better(&self) -> bool {
        match self.kind {
            ProblemKind::FnrAtFpr { .. } | ProblemKind::GroupCoverageFloor { .. } => false,
            ProblemKind::PrecAtRecall { .. }
            | ProblemKind::PrecAtK { .. }
            | ProblemKind::PaucRoc { .. }
            | ProblemKind::PaucPr { .. } => true,
        }
    }
}

impl ProblemKind {
    pub fn build(&self) -> Result<ProblemSpec> {
        match *self {
            ProblemKind::FnrAtFpr { beta } => build_fnr_at_fpr(beta),
            ProblemKind::PrecAtRecall { beta } => build_prec_at_recall(beta),
            ProblemKind::PrecAtK { k } => build_prec_at_k(k),
            ProblemKind::PaucRoc { beta, grid_m } => build_pauc_roc(beta, grid_m),
            ProblemKind::PaucPr { beta, grid_m } => build_pauc_pr(beta, grid_m),
            ProblemKind::GroupCoverageFloor { num_groups, floor } => {
                build_group_coverage_floor(num_groups, floor)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Builders
// ---------------------------------------------------------------------------

fn check_unit_open(name: &str, v: f64) -> Result<()> {
    if !(v > 0.0 && v < 1.0) {
        return Err(IrcoError::InvalidInput(format!(
            "{name} must lie strictly inside (0, 1), got {v}"
        )));
    }
    Ok(())
}

/// Upper bound on the constraints a builder will emit. Every constraint owns
/// a threshold, a correction rule, and per-batch derivative buffers, so the
/// count directly scales memory and per-step cost.
const MAX_CONSTRAINTS: usize = 10_000;

fn check_constraint_budget(what: &str, count: usize) -> Result<()> {
    if count > MAX_CONSTRAINTS {
        return Err(IrcoError::InvalidInput(format!(
            "{what} of {count} exceeds the supported maximum of {MAX_CONSTRAINTS}"
        )));
    }
    Ok(())
}

/// Minimize the false-negative rate while the false-positive rate is held at
/// `beta`. Correction picks the tightest threshold with FPR at most `beta`.
pub fn build_fnr_at_fpr(beta: f64) -> Result<ProblemSpec> {
    check_unit_open("fpr target", beta)?;
    Ok(ProblemSpec {
        kind: ProblemKind::FnrAtFpr { beta },
        objective: Objective::MeanRate {
            kind: RateKind::Fnr,
            negate: false,
        },
        constraints: vec![ConstraintSpec {
            func: ConstraintFunc::Rate(RateKind::Fpr),
            target: beta,
            relation: Relation::Equals,
            governed_threshold: 0,
            correction: CorrectionRule::Rate {
                kind: RateKind::Fpr,
                target: beta,
                sense: Sense::AtMost,
            },
        }],
        per_group: false,
        count_reference: None,
    })
}

/// Maximize precision while recall is held at `beta`. Correction picks the
/// loosest threshold with recall at least `beta`.
pub fn build_prec_at_recall(beta: f64) -> Result<ProblemSpec> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(IrcoError::InvalidInput(format!(
            "recall target must lie in (0, 1], got {beta}"
        )));
    }
    Ok(ProblemSpec {
        kind: ProblemKind::PrecAtRecall { beta },
        objective: Objective::MeanRate {
            kind: RateKind::Precision,
            negate: true,
        },
        constraints: vec![ConstraintSpec {
            func: ConstraintFunc::Rate(RateKind::Recall),
            target: beta,
            relation: Relation::Equals,
            governed_threshold: 0,
            correction: CorrectionRule::Rate {
                kind: RateKind::Recall,
                target: beta,
                sense: Sense::AtLeast,
            },
        }],
        per_group: false,
        count_reference: None,
    })
}

/// Maximize precision with exactly `k` predicted positives. The constraint
/// is a count, not a rate; call [`ProblemSpec::set_count_reference`] with the
/// population the budget was stated for before evaluating on sub-batches.
pub fn build_prec_at_k(k: usize) -> Result<ProblemSpec> {
    Ok(ProblemSpec {
        kind: ProblemKind::PrecAtK { k },
        objective: Objective::MeanRate {
            kind: RateKind::Precision,
            negate: true,
        },
        constraints: vec![ConstraintSpec {
            func: ConstraintFunc::PredictedPositiveCount,
            target: k as f64,
            relation: Relation::Equals,
            governed_threshold: 0,
            correction: CorrectionRule::TopCount { k },
        }],
        per_group: false,
        count_reference: None,
    })
}

/// Maximize mean true-positive rate over a grid of thresholds whose
/// false-positive rates are pinned to equally spaced targets in (0, beta].
pub fn build_pauc_roc(beta: f64, grid_m: usize) -> Result<ProblemSpec> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(IrcoError::InvalidInput(format!(
            "fpr range endpoint must lie in (0, 1], got {beta}"
        )));
    }
    if grid_m == 0 {
        return Err(IrcoError::InvalidInput(
            "fpr grid needs at least one point".into(),
        ));
    }
    check_constraint_budget("fpr grid size", grid_m)?;
    let constraints = (0..grid_m)
        .map(|i| {
            let target = beta * (i + 1) as f64 / grid_m as f64;
            ConstraintSpec {
                func: ConstraintFunc::Rate(RateKind::Fpr),
                target,
                relation: Relation::Equals,
                governed_threshold: i,
                correction: CorrectionRule::Rate {
                    kind: RateKind::Fpr,
                    target,
                    sense: Sense::AtMost,
                },
            }
        })
        .collect();
    Ok(ProblemSpec {
        kind: ProblemKind::PaucRoc { beta, grid_m },
        objective: Objective::MeanRate {
            kind: RateKind::Tpr,
            negate: true,
        },
        constraints,
        per_group: false,
        count_reference: None,
    })
}

/// Maximize mean precision over a grid of thresholds whose recalls are
/// pinned to equally spaced targets spanning [beta, 1], endpoint included.
pub fn build_pauc_pr(beta: f64, grid_m: usize) -> Result<ProblemSpec> {
    if !(beta >= 0.0 && beta < 1.0) {
        return Err(IrcoError::InvalidInput(format!(
            "recall range start must lie in [0, 1), got {beta}"
        )));
    }
    if grid_m == 0 {
        return Err(IrcoError::InvalidInput(
            "recall grid needs at least one point".into(),
        ));
    }
    check_constraint_budget("recall grid size", grid_m)?;
    let constraints = (0..grid_m)
        .map(|i| {
            let target = metrics::recall_grid_target(beta, grid_m, i);
            ConstraintSpec {
                func: ConstraintFunc::Rate(RateKind::Recall),
                target,
                relation: Relation::Equals,
                governed_threshold: i,
                correction: CorrectionRule::Rate {
                    kind: RateKind::Recall,
                    target,
                    sense: Sense::AtLeast,
                },
            }
        })
        .collect();
    Ok(ProblemSpec {
        kind: ProblemKind::PaucPr { beta, grid_m },
        objective: Objective::MeanRate {
            kind: RateKind::Precision,
            negate: true,
        },
        constraints,
        per_group: false,
        count_reference: None,
    })
}

/// Minimize classification error with one threshold per group while every
/// group's positive-prediction share stays at or above `floor`.
pub fn build_group_coverage_floor(num_groups: usize, floor: f64) -> Result<ProblemSpec> {
    if num_groups == 0 {
        return Err(IrcoError::InvalidInput(
            "group coverage needs at least one group".into(),
        ));
    }
    check_constraint_budget("group count", num_groups)?;
    check_unit_open("coverage floor", floor)?;
    let constraints = (0..num_groups)
        .map(|g| ConstraintSpec {
            func: ConstraintFunc::Rate(RateKind::GroupCoverage(g)),
            target: floor,
            relation: Relation::AtLeast,
            governed_threshold: g,
            correction: CorrectionRule::Rate {
                kind: RateKind::GroupCoverage(g),
                target: floor,
                sense: Sense::AtLeast,
            },
        })
        .collect();
    Ok(ProblemSpec {
        kind: ProblemKind::GroupCoverageFloor { num_groups, floor },
        objective: Objective::GroupErrorRate,
        constraints,
        per_group: true,
        count_reference: None,
    })
}

/// The conventional 80% rule: every group's coverage at least 0.8.
pub fn build_fairness_80pct(num_groups: usize) -> Result<ProblemSpec> {
    build_group_coverage_floor(num_groups, 0.8)
}

// ---------------------------------------------------------------------------
// Smoothed evaluation
// ---------------------------------------------------------------------------

/// One constraint's smoothed residual and every derivative the trainer needs.
/// `value` is `function - target` (un-oriented); score vectors span the full
/// batch, with zeros outside the constraint's group.
#[derive(Debug, Clone)]
pub struct ConstraintEval {
    pub value: f64,
    pub d_lambda: f64,
    pub d2_lambda: f64,
    pub d_score: Vec<f64>,
    pub d2_lambda_score: Vec<f64>,
}

/// Smoothed objective and constraints at one parameter/threshold point.
#[derive(Debug, Clone)]
pub struct ProblemEval {
    pub objective: f64,
    /// One entry per threshold.
    pub obj_d_lambda: Vec<f64>,
    /// One entry per batch example.
    pub obj_d_score: Vec<f64>,
    /// Indexed like `ProblemSpec::constraints`.
    pub constraints: Vec<ConstraintEval>,
}

fn check_batch(
    spec: &ProblemSpec,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    lambdas: &[f64],
) -> Result<()> {
    spec.validate()?;
    if scores.is_empty() {
        return Err(IrcoError::EmptyBatch {
            context: "problem evaluation",
        });
    }
    if labels.len() != scores.len() {
        return Err(IrcoError::DimensionMismatch {
            context: "problem labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if lambdas.len() != spec.m() {
        return Err(IrcoError::DimensionMismatch {
            context: "problem thresholds",
            expected: spec.m(),
            got: lambdas.len(),
        });
    }
    if spec.needs_groups() {
        let g = groups.ok_or_else(|| {
            IrcoError::InvalidInput("this problem requires per-example group ids".into())
        })?;
        if g.len() != scores.len() {
            return Err(IrcoError::DimensionMismatch {
                context: "problem groups",
                expected: scores.len(),
                got: g.len(),
            });
        }
        if let Some(&bad) = g.iter().find(|&&id| id >= spec.m()) {
            return Err(IrcoError::InvalidInput(format!(
                "group id {bad} out of range for {} groups",
                spec.m()
            )));
        }
    }
    Ok(())
}

/// Evaluates the smoothed objective and all constraints on one batch.
pub fn evaluate(
    spec: &ProblemSpec,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    lambdas: &[f64],
    surrogate: &Surrogate,
) -> Result<ProblemEval> {
    check_batch(spec, scores, labels, groups, lambdas)?;
    let n = scores.len();
    let m = spec.m();
    let mut out = ProblemEval {
        objective: 0.0,
        obj_d_lambda: vec![0.0; m],
        obj_d_score: vec![0.0; n],
        constraints: Vec::with_capacity(m),
    };
    // Filled in constraint order below; start with placeholders.
    let mut constraint_evals: Vec<Option<ConstraintEval>> = (0..m).map(|_| None).collect();

    match spec.objective {
        Objective::MeanRate { kind, negate } => {
            let weight = if negate { -1.0 } else { 1.0 } / m as f64;
            for &ci in &spec.by_threshold() {
                let c = &spec.constraints[ci];
                let t = c.governed_threshold;
                let counts = surrogates::smooth_counts(scores, labels, lambdas[t], surrogate)?;
                let obj = surrogates::smooth_rate(kind, &counts)?;
                out.objective += weight * obj.value;
                out.obj_d_lambda[t] = weight * obj.d_lambda;
                for (acc, d) in out.obj_d_score.iter_mut().zip(&obj.d_score) {
                    *acc += weight * d;
                }
                let raw = match c.func {
                    ConstraintFunc::Rate(k) => surrogates::smooth_rate(k, &counts)?,
                    ConstraintFunc::PredictedPositiveCount => {
                        surrogates::smooth_positive_count(&counts)
                    }
                };
                constraint_evals[ci] = Some(ConstraintEval {
                    value: raw.value - spec.scaled_target(c, n),
                    d_lambda: raw.d_lambda,
                    d2_lambda: raw.d2_lambda,
                    d_score: raw.d_score,
                    d2_lambda_score: raw.d2_lambda_score,
                });
            }
        }
        Objective::GroupErrorRate => {
            let g = groups.expect("checked by check_batch");
            for &ci in &spec.by_threshold() {
                let c = &spec.constraints[ci];
                let t = c.governed_threshold;
                let members: Vec<usize> = (0..n).filter(|&i| g[i] == t).collect();
                if members.is_empty() {
                    return Err(IrcoError::EmptyBatch {
                        context: "group slice of the evaluation batch",
                    });
                }
                let sub_scores: Vec<f64> = members.iter().map(|&i| scores[i]).collect();
                let sub_labels: Vec<u8> = members.iter().map(|&i| labels[i]).collect();
                let counts =
                    surrogates::smooth_counts(&sub_scores, &sub_labels, lambdas[t], surrogate)?;
                let err = surrogates::smooth_error_count(&counts);
                out.objective += err.value / n as f64;
                out.obj_d_lambda[t] = err.d_lambda / n as f64;
                for (k, &i) in members.iter().enumerate() {
                    out.obj_d_score[i] += err.d_score[k] / n as f64;
                }
                let kind = match c.func {
                    ConstraintFunc::Rate(k) => k,
                    ConstraintFunc::PredictedPositiveCount => {
                        return Err(IrcoError::InvalidInput(
                            "count-form constraints are not defined per group".into(),
                        ))
                    }
                };
                let raw = surrogates::smooth_rate(kind, &counts)?;
                let mut eval = ConstraintEval {
                    value: raw.value - spec.scaled_target(c, n),
                    d_lambda: raw.d_lambda,
                    d2_lambda: raw.d2_lambda,
                    d_score: vec![0.0; n],
                    d2_lambda_score: vec![0.0; n],
                };
                for (k, &i) in members.iter().enumerate() {
                    eval.d_score[i] = raw.d_score[k];
                    eval.d2_lambda_score[i] = raw.d2_lambda_score[k];
                }
                constraint_evals[ci] = Some(eval);
            }
        }
    }
    out.constraints = constraint_evals
        .into_iter()
        .map(|e| e.expect("every constraint evaluated"))
        .collect();
    Ok(out)
}

// ---------------------------------------------------------------------------
// Residual orientation
// ---------------------------------------------------------------------------

/// Maps a raw residual (`function - target`) to the `c <= 0` convention:
/// positive means violated for inequalities, signed distance for equalities.
pub fn oriented_residual(relation: Relation, raw: f64) -> f64 {
    match relation {
        Relation::Equals | Relation::AtMost => raw,
        Relation::AtLeast => -raw,
    }
}

/// Whether a correction must re-solve this constraint. Equalities always
/// re-solve; inequalities only when currently violated.
pub fn needs_correction(relation: Relation, raw: f64) -> bool {
    match relation {
        Relation::Equals => true,
        Relation::AtMost | Relation::AtLeast => oriented_residual(relation, raw) > 0.0,
    }
}

// ---------------------------------------------------------------------------
// Exact (unrelaxed) operations
// ---------------------------------------------------------------------------

fn group_slice(
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    g: usize,
) -> Result<(Vec<f64>, Vec<u8>)> {
    let ids = groups.ok_or_else(|| {
        IrcoError::InvalidInput("group-scoped rate requires per-example group ids".into())
    })?;
    let mut s = Vec::new();
    let mut l = Vec::new();
    for i in 0..scores.len() {
        if ids[i] == g {
            s.push(scores[i]);
            l.push(labels[i]);
        }
    }
    if s.is_empty() {
        return Err(IrcoError::EmptyBatch {
            context: "group slice",
        });
    }
    Ok((s, l))
}

/// Exact threshold for one constraint per its correction rule.
pub fn correct_threshold(
    spec: &ProblemSpec,
    constraint_idx: usize,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
) -> Result<f64> {
    let c = &spec.constraints[constraint_idx];
    match c.correction {
        CorrectionRule::Rate {
            kind: RateKind::GroupCoverage(g),
            target,
            sense,
        } => {
            let (s, l) = group_slice(scores, labels, groups, g)?;
            metrics::exact_threshold(&s, &l, RateKind::Coverage, target, sense)
        }
        CorrectionRule::Rate { kind, target, sense } => {
            metrics::exact_threshold(scores, labels, kind, target, sense)
        }
        CorrectionRule::TopCount { k } => {
            let k_eff = match spec.count_reference {
                Some(nr) if nr > 0 => {
                    let scaled = k as f64 * scores.len() as f64 / nr as f64;
                    (scaled.round() as usize).min(scores.len())
                }
                _ => k.min(scores.len()),
            };
            metrics::exact_count_threshold(scores, labels, k_eff)
        }
    }
}

/// Exact thresholds for every constraint, indexed by governed threshold.
pub fn correct_thresholds(
    spec: &ProblemSpec,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
) -> Result<Vec<f64>> {
    spec.validate()?;
    let mut lambdas = vec![0.0; spec.m()];
    for (ci, c) in spec.constraints.iter().enumerate() {
        lambdas[c.governed_threshold] = correct_threshold(spec, ci, scores, labels, groups)?;
    }
    Ok(lambdas)
}

/// Raw unrelaxed residual (`function - target`) of one constraint at a given
/// threshold, from hard counts.
pub fn unrelaxed_residual(
    spec: &ProblemSpec,
    constraint_idx: usize,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    lambda: f64,
) -> Result<f64> {
    let c = &spec.constraints[constraint_idx];
    match c.func {
        ConstraintFunc::Rate(RateKind::GroupCoverage(g)) => {
            let (s, l) = group_slice(scores, labels, groups, g)?;
            let counts = metrics::confusion_counts(&s, &l, lambda)?;
            Ok(metrics::rate(&counts, RateKind::Coverage)? - c.target)
        }
        ConstraintFunc::Rate(kind) => {
            let counts = metrics::confusion_counts(scores, labels, lambda)?;
            Ok(metrics::rate(&counts, kind)? - c.target)
        }
        ConstraintFunc::PredictedPositiveCount => {
            let counts = metrics::confusion_counts(scores, labels, lambda)?;
            let pp = (counts.tp + counts.fp) as f64;
            Ok(pp - spec.scaled_target(c, scores.len()))
        }
    }
}

/// Largest oriented unrelaxed residual across all constraints; at or below
/// zero means every constraint holds.
pub fn worst_violation(
    spec: &ProblemSpec,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    lambdas: &[f64],
) -> Result<f64> {
    let mut worst = f64::NEG_INFINITY;
    for (ci, c) in spec.constraints.iter().enumerate() {
        let raw = unrelaxed_residual(spec, ci, scores, labels, groups, lambdas[c.governed_threshold])?;
        let oriented = match c.relation {
            Relation::Equals => raw.abs(),
            _ => oriented_residual(c.relation, raw),
        };
        worst = worst.max(oriented);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// Evaluation metrics (unrelaxed, for selection and reporting)
// ---------------------------------------------------------------------------

/// Problem metric with thresholds refit on the given data per the problem's
/// own correction rules. Curve metrics (partial areas) come straight from the
/// scores and need no thresholds.
pub fn eval_metric(
    spec: &ProblemSpec,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
) -> Result<f64> {
    match spec.kind {
        ProblemKind::PaucRoc { .. } | ProblemKind::PaucPr { .. } => {
            metric_at(spec, scores, labels, groups, &[])
        }
        _ => {
            let lambdas = correct_thresholds(spec, scores, labels, groups)?;
            metric_at(spec, scores, labels, groups, &lambdas)
        }
    }
}

/// Problem metric at externally supplied thresholds (for threshold-carrying
/// methods evaluated on held-out data).
pub fn eval_metric_at(
    spec: &ProblemSpec,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    lambdas: &[f64],
) -> Result<f64> {
    match spec.kind {
        ProblemKind::PaucRoc { .. } | ProblemKind::PaucPr { .. } => {}
        _ => {
            if lambdas.len() != spec.m() {
                return Err(IrcoError::DimensionMismatch {
                    context: "metric thresholds",
                    expected: spec.m(),
                    got: lambdas.len(),
                });
            }
        }
    }
    metric_at(spec, scores, labels, groups, lambdas)
}

fn metric_at(
    spec: &ProblemSpec,
    scores: &[f64],
    labels: &[u8],
    groups: Option<&[usize]>,
    lambdas: &[f64],
) -> Result<f64> {
    match spec.kind {
        ProblemKind::FnrAtFpr { .. } => {
            let counts = metrics::confusion_counts(scores, labels, lambdas[0])?;
            metrics::rate(&counts, RateKind::Fnr)
        }
        ProblemKind::PrecAtRecall { .. } | ProblemKind::PrecAtK { .. } => {
            let counts = metrics::confusion_counts(scores, labels, lambdas[0])?;
            metrics::rate(&counts, RateKind::Precision)
        }
        // Scaled to [0, 1]: 1 is perfect, 0.5 is chance.
        ProblemKind::PaucRoc { beta, grid_m } => {
            let (_, mcclish) = metrics::partial_auc_roc(scores, labels, beta, grid_m)?;
            Ok(mcclish / 100.0)
        }
        ProblemKind::PaucPr { beta, grid_m } => {
            metrics::partial_auc_pr(scores, labels, beta, grid_m)
        }
        ProblemKind::GroupCoverageFloor { .. } => {
            let g = groups.ok_or_else(|| {
                IrcoError::InvalidInput("group metric requires per-example group ids".into())
            })?;
            let mut wrong = 0usize;
            for i in 0..scores.len() {
                let pred = scores[i] > lambdas[g[i]];
                if pred != (labels[i] == 1) {
                    wrong += 1;
                }
            }
            Ok(wrong as f64 / scores.len() as f64)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_batch(seed: u64, n: usize) -> (Vec<f64>, Vec<u8>) {
        let mut scores = Vec::with_capacity(n);
        let mut labels = Vec::with_capacity(n);
        for i in 0..n {
            let (s, _) = rng::normal_pair_at(seed, i as u64);
            scores.push(s);
            labels.push(u8::from(rng::f64_at(rng::child_seed(seed, 1), i as u64) < 0.45));
        }
        // Both classes guaranteed.
        labels[0] = 0;
        labels[1] = 1;
        (scores, labels)
    }

    fn random_groups(seed: u64, n: usize, g: usize) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..n).map(|i| rng::index_at(seed, i as u64, g)).collect();
        // Every group inhabited with both classes, by construction.
        for gg in 0..g {
            ids[2 * gg] = gg;
            ids[2 * gg + 1] = gg;
        }
        ids
    }

    #[test]
    fn fpr_grid_is_strictly_increasing_up_to_beta() {
        let p = build_pauc_roc(0.1, 10).unwrap();
        assert_eq!(p.m(), 10);
        let targets: Vec<f64> = p.constraints.iter().map(|c| c.target).collect();
        for w in targets.windows(2) {
            assert!(w[0] < w[1]);
        }
        assert!((targets[0] - 0.01).abs() < 1e-15);
        assert!((targets[9] - 0.1).abs() < 1e-15);
        p.validate().unwrap();
    }

    #[test]
    fn recall_grid_spans_to_one_inclusive() {
        let p = build_pauc_pr(0.95, 5).unwrap();
        let targets: Vec<f64> = p.constraints.iter().map(|c| c.target).collect();
        assert_eq!(targets.len(), 5);
        assert!((targets[0] - 0.95).abs() < 1e-15);
        assert_eq!(targets[4], 1.0);
        let single = build_pauc_pr(0.5, 1).unwrap();
        assert_eq!(single.constraints[0].target, 1.0);
    }

    #[test]
    fn single_constraint_builders_have_one_threshold() {
        let p = build_fnr_at_fpr(0.05).unwrap();
        assert_eq!(p.m(), 1);
        assert!(matches!(
            p.objective,
            Objective::MeanRate {
                kind: RateKind::Fnr,
                negate: false
            }
        ));
        assert!(!p.metric_higher_is_better());
        assert!(build_fnr_at_fpr(0.0).is_err());
        assert!(build_fnr_at_fpr(1.0).is_err());
        assert!(build_prec_at_recall(1.0).is_ok());
        assert!(build_pauc_roc(0.1, 0).is_err());
    }

    #[test]
    fn problem_kind_serde_roundtrip() {
        let kinds = [
            ProblemKind::FnrAtFpr { beta: 0.05 },
            ProblemKind::PrecAtK { k: 25 },
            ProblemKind::PaucRoc { beta: 0.1, grid_m: 10 },
            ProblemKind::GroupCoverageFloor { num_groups: 3, floor: 0.8 },
        ];
        for k in kinds {
            let json = serde_json::to_string(&k).unwrap();
            let back: ProblemKind = serde_json::from_str(&json).unwrap();
            assert_eq!(back, k);
        }
        let parsed: ProblemKind =
            serde_json::from_str(r#"{"kind":"fnr_at_fpr","beta":0.02}"#).unwrap();
        assert_eq!(parsed, ProblemKind::FnrAtFpr { beta: 0.02 });
        assert!(serde_json::from_str::<ProblemKind>(r#"{"kind":"fnr_at_fpr","beta":0.02,"x":1}"#)
            .is_err());
    }

    /// Finite-difference check of every derivative `evaluate` reports.
    fn check_eval_fd(
        spec: &ProblemSpec,
        scores: &[f64],
        labels: &[u8],
        groups: Option<&[usize]>,
        lambdas: &[f64],
    ) {
        let surrogate = Surrogate::sigmoid(2.0).unwrap();
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-7);
        let eval = |sc: &[f64], lm: &[f64]| {
            evaluate(spec, sc, labels, groups, lm, &surrogate).unwrap()
        };
        let e = eval(scores, lambdas);
        let h = 1e-6;

        for t in 0..spec.m() {
            let mut up = lambdas.to_vec();
            let mut dn = lambdas.to_vec();
            up[t] += h;
            dn[t] -= h;
            let (eu, ed) = (eval(scores, &up), eval(scores, &dn));
            let fd_obj = (eu.objective - ed.objective) / (2.0 * h);
            assert!(
                rel(e.obj_d_lambda[t], fd_obj) < 1e-4,
                "obj d_lambda[{t}]: {} vs {}",
                e.obj_d_lambda[t],
                fd_obj
            );
            for (ci, c) in spec.constraints.iter().enumerate() {
                let fd_c = (eu.constraints[ci].value - ed.constraints[ci].value) / (2.0 * h);
                let expect = if c.governed_threshold == t {
                    e.constraints[ci].d_lambda
                } else {
                    0.0
                };
                assert!(
                    rel(expect, fd_c) < 1e-4 || (expect.abs() < 1e-9 && fd_c.abs() < 1e-9),
                    "constraint {ci} d_lambda wrt t={t}"
                );
                if c.governed_threshold == t {
                    let fd_c2 =
                        (eu.constraints[ci].d_lambda - ed.constraints[ci].d_lambda) / (2.0 * h);
                    assert!(rel(e.constraints[ci].d2_lambda, fd_c2) < 1e-4);
                }
            }
        }

        for j in (0..scores.len()).step_by(3) {
            let hj = 1e-6 * scores[j].abs().max(1.0);
            let mut up = scores.to_vec();
            let mut dn = scores.to_vec();
            up[j] += hj;
            dn[j] -= hj;
            let (eu, ed) = (eval(&up, lambdas), eval(&dn, lambdas));
            let fd_obj = (eu.objective - ed.objective) / (2.0 * hj);
            assert!(
                rel(e.obj_d_score[j], fd_obj) < 1e-4
                    || (e.obj_d_score[j].abs() < 1e-9 && fd_obj.abs() < 1e-9),
                "obj d_score[{j}]"
            );
            for ci in 0..spec.m() {
                let fd_c = (eu.constraints[ci].value - ed.constraints[ci].value) / (2.0 * hj);
                let a = e.constraints[ci].d_score[j];
                assert!(
                    rel(a, fd_c) < 1e-4 || (a.abs() < 1e-9 && fd_c.abs() < 1e-9),
                    "constraint {ci} d_score[{j}]"
                );
                let fd_m = (eu.constraints[ci].d_lambda - ed.constraints[ci].d_lambda) / (2.0 * hj);
                let am = e.constraints[ci].d2_lambda_score[j];
                assert!(
                    rel(am, fd_m) < 1e-4 || (am.abs() < 1e-9 && fd_m.abs() < 1e-9),
                    "constraint {ci} d2_lambda_score[{j}]"
                );
            }
        }
    }

    #[test]
    fn all_problem_families_pass_derivative_checks() {
        let (scores, labels) = random_batch(31, 24);
        for spec in [
            build_fnr_at_fpr(0.3).unwrap(),
            build_prec_at_recall(0.7).unwrap(),
            build_pauc_roc(0.5, 3).unwrap(),
            build_pauc_pr(0.4, 3).unwrap(),
        ] {
            let lambdas: Vec<f64> = (0..spec.m()).map(|i| 0.3 - 0.2 * i as f64).collect();
            check_eval_fd(&spec, &scores, &labels, None, &lambdas);
        }
        let mut topk = build_prec_at_k(5).unwrap();
        topk.set_count_reference(24);
        check_eval_fd(&topk, &scores, &labels, None, &[0.1]);

        let groups = random_groups(77, 24, 2);
        let fair = build_group_coverage_floor(2, 0.6).unwrap();
        check_eval_fd(&fair, &scores, &labels, Some(&groups), &[0.1, -0.2]);
    }

    #[test]
    fn built_constraints_decrease_in_their_threshold() {
        let (scores, labels) = random_batch(5, 40);
        let surrogate = Surrogate::sigmoid(3.0).unwrap();
        for spec in [
            build_fnr_at_fpr(0.2).unwrap(),
            build_prec_at_recall(0.5).unwrap(),
            build_prec_at_k(7).unwrap(),
            build_pauc_roc(0.3, 4).unwrap(),
        ] {
            let lambdas = vec![0.0; spec.m()];
            let e = evaluate(&spec, &scores, &labels, None, &lambdas, &surrogate).unwrap();
            for c in &e.constraints {
                assert!(c.d_lambda < 0.0, "constraint slope must be negative");
            }
        }
    }

    #[test]
    fn count_targets_scale_with_batch_fraction() {
        let mut spec = build_prec_at_k(6).unwrap();
        spec.set_count_reference(20);
        let scores: Vec<f64> = (0..10).map(|i| i as f64 / 10.0).collect();
        let labels = vec![0, 1, 0, 1, 0, 1, 0, 1, 0, 1];
        // Batch is half the reference population: effective budget 3.
        let lam = correct_threshold(&spec, 0, &scores, &labels, None).unwrap();
        let above = scores.iter().filter(|&&s| s > lam).count();
        assert_eq!(above, 3);
        let res = unrelaxed_residual(&spec, 0, &scores, &labels, None, lam).unwrap();
        assert_eq!(res, 0.0);
    }

    #[test]
    fn identical_groups_correct_to_identical_thresholds() {
        let spec = build_fairness_80pct(2).unwrap();
        let half: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let scores: Vec<f64> = half.iter().chain(half.iter()).copied().collect();
        let labels: Vec<u8> = (0..60).map(|i| u8::from(i % 3 == 0)).collect();
        let groups: Vec<usize> = (0..60).map(|i| usize::from(i >= 30)).collect();
        let lambdas = correct_thresholds(&spec, &scores, &labels, Some(&groups)).unwrap();
        assert_eq!(lambdas[0], lambdas[1]);
        // Coverage floor holds exactly after correction.
        for (ci, _) in spec.constraints.iter().enumerate() {
            let res =
                unrelaxed_residual(&spec, ci, &scores, &labels, Some(&groups), lambdas[ci]).unwrap();
            assert!(res >= -1e-12, "coverage below floor: residual {res}");
        }
    }

    #[test]
    fn group_coverage_holds_after_correction_on_random_data() {
        for seed in 0..20u64 {
            let n = 40 + (seed as usize % 23);
            let (scores, labels) = random_batch(seed, n);
            let groups = random_groups(seed + 1000, n, 3);
            let spec = build_fairness_80pct(3).unwrap();
            let lambdas = correct_thresholds(&spec, &scores, &labels, Some(&groups)).unwrap();
            for g in 0..3 {
                let members: Vec<usize> = (0..n).filter(|&i| groups[i] == g).collect();
                let covered = members.iter().filter(|&&i| scores[i] > lambdas[g]).count();
                let cov = covered as f64 / members.len() as f64;
                assert!(
                    cov >= 0.8 - 1.0 / members.len() as f64 - 1e-12,
                    "seed {seed} group {g}: coverage {cov}"
                );
            }
        }
    }

    #[test]
    fn constraint_score_derivatives_stay_inside_their_group() {
        let (scores, labels) = random_batch(3, 20);
        let groups = random_groups(9, 20, 2);
        let spec = build_group_coverage_floor(2, 0.5).unwrap();
        let surrogate = Surrogate::sigmoid(2.0).unwrap();
        let e = evaluate(&spec, &scores, &labels, Some(&groups), &[0.0, 0.0], &surrogate).unwrap();
        for (ci, c) in spec.constraints.iter().enumerate() {
            for j in 0..20 {
                if groups[j] != c.governed_threshold {
                    assert_eq!(e.constraints[ci].d_score[j], 0.0);
                    assert_eq!(e.constraints[ci].d2_lambda_score[j], 0.0);
                }
            }
        }
        // Objective touches every example.
        assert!(e.obj_d_score.iter().all(|&d| d != 0.0));
    }

    #[test]
    fn orientation_helpers_follow_the_le_zero_convention() {
        assert_eq!(oriented_residual(Relation::AtMost, 0.2), 0.2);
        assert_eq!(oriented_residual(Relation::AtLeast, 0.2), -0.2);
        assert!(needs_correction(Relation::Equals, 0.0));
        assert!(needs_correction(Relation::AtMost, 0.1));
        assert!(!needs_correction(Relation::AtMost, -0.1));
        assert!(needs_correction(Relation::AtLeast, -0.1));
        assert!(!needs_correction(Relation::AtLeast, 0.1));
    }

    #[test]
    fn fnr_metric_refits_the_fpr_budget_threshold() {
        // Negatives at {0.1, 0.2, 0.8, 0.9}, positives at {0.5, 0.85}.
        let scores = [0.1, 0.2, 0.5, 0.8, 0.85, 0.9];
        let labels = [0, 0, 1, 0, 1, 0];
        let spec = build_fnr_at_fpr(0.25).unwrap();
        // Budget admits one false positive: threshold between 0.8 and 0.85,
        // which loses the positive at 0.5.
        let m = eval_metric(&spec, &scores, &labels, None).unwrap();
        assert_eq!(m, 0.5);
        let at = eval_metric_at(&spec, &scores, &labels, None, &[0.0]).unwrap();
        assert_eq!(at, 0.0);
    }

    #[test]
    fn curve_metrics_ignore_thresholds_and_hit_perfection_at_one() {
        let scores = [0.1, 0.2, 0.7, 0.9];
        let labels = [0, 0, 1, 1];
        let spec = build_pauc_roc(0.5, 4).unwrap();
        let m = eval_metric(&spec, &scores, &labels, None).unwrap();
        assert_eq!(m, 1.0);
        let spec = build_pauc_pr(0.5, 3).unwrap();
        let m = eval_metric(&spec, &scores, &labels, None).unwrap();
        assert_eq!(m, 1.0);
    }

    #[test]
    fn group_metric_counts_errors_at_per_group_thresholds() {
        let scores = [1.0, -1.0, 1.0, -1.0];
        let labels = [1, 0, 0, 1];
        let groups = [0, 0, 1, 1];
        let spec = build_group_coverage_floor(2, 0.5).unwrap();
        let m = eval_metric_at(&spec, &scores, &labels, Some(&groups), &[0.0, 0.0]).unwrap();
        assert_eq!(m, 0.5);
    }

    #[test]
    fn bijection_violations_are_rejected() {
        let mut p = build_pauc_roc(0.2, 2).unwrap();
        p.constraints[1].governed_threshold = 0;
        assert!(p.validate().is_err());
        let mut p = build_pauc_roc(0.2, 2).unwrap();
        p.constraints[0].governed_threshold = 5;
        assert!(p.validate().is_err());
    }

    #[test]
    fn builders_reject_constraint_counts_over_budget() {
        assert!(build_pauc_roc(0.3, MAX_CONSTRAINTS).is_ok());
        assert!(build_pauc_roc(0.3, MAX_CONSTRAINTS + 1).is_err());
        assert!(build_pauc_pr(0.3, MAX_CONSTRAINTS + 1).is_err());
        assert!(build_group_coverage_floor(MAX_CONSTRAINTS + 1, 0.5).is_err());
    }
}
