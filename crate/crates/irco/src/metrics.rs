//! Exact (non-smooth) threshold metrics.
//!
//! Everything here operates on raw scores and binary labels with the strict
//! decision rule `predict positive iff score > threshold`. Tied scores
//! therefore move across the threshold together, and the only thresholds
//! worth distinguishing are the midpoints between adjacent distinct scores
//! plus a sentinel on each side of the score range. All curve and partial-AUC
//! code is built on that candidate set, so exact search, ROC/PR points and
//! partial areas are mutually consistent by construction.

use std::fmt;

use crate::error::{IrcoError, Result};

// ---------------------------------------------------------------------------
// Rate kinds and counts
// ---------------------------------------------------------------------------

/// Threshold-based rates, each a total function of a [`RateCounts`].
///
/// `GroupCoverage(g)` is coverage evaluated on the sub-batch belonging to
/// group `g`; the filtering is the caller's job, the arithmetic here is the
/// same as [`RateKind::Coverage`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RateKind {
    Fpr,
    Fnr,
    Tpr,
    Precision,
    Recall,
    Coverage,
    GroupCoverage(usize),
}

impl fmt::Display for RateKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RateKind::Fpr => write!(f, "FPR"),
            RateKind::Fnr => write!(f, "FNR"),
            RateKind::Tpr => write!(f, "TPR"),
            RateKind::Precision => write!(f, "precision"),
            RateKind::Recall => write!(f, "recall"),
            RateKind::Coverage => write!(f, "coverage"),
            RateKind::GroupCoverage(g) => write!(f, "coverage(group {g})"),
        }
    }
}

impl RateKind {
    /// Whether the rate is monotone in the threshold (precision is not).
    pub fn is_monotone(&self) -> bool {
        !matches!(self, RateKind::Precision)
    }

    /// Rates that decrease as the threshold rises. FNR is the one increaser.
    pub fn decreasing_in_threshold(&self) -> bool {
        !matches!(self, RateKind::Fnr)
    }
}

/// Confusion counts at a fixed threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RateCounts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
    pub tn: usize,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl RateCounts {
    pub fn new(tp: usize, fp: usize, fn_: usize, tn: usize) -> Self {
        RateCounts {
            tp,
            fp,
            fn_,
            tn,
            n_pos: tp + fn_,
            n_neg: fp + tn,
        }
    }

    pub fn total(&self) -> usize {
        self.n_pos + self.n_neg
    }
}

fn check_labels(labels: &[u8], context: &'static str) -> Result<()> {
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(IrcoError::InvalidInput(format!(
            "{context}: labels must be 0 or 1, got {bad}"
        )));
    }
    Ok(())
}

/// Exact confusion counts of `score > threshold` against binary labels.
pub fn confusion_counts(scores: &[f64], labels: &[u8], threshold: f64) -> Result<RateCounts> {
    if scores.is_empty() {
        return Err(IrcoError::EmptyBatch {
            context: "confusion_counts",
        });
    }
    if scores.len() != labels.len() {
        return Err(IrcoError::DimensionMismatch {
            context: "confusion_counts labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    check_labels(labels, "confusion_counts")?;
    let (mut tp, mut fp, mut fn_, mut tn) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &y) in scores.iter().zip(labels) {
        match (y == 1, s > threshold) {
            (true, true) => tp += 1,
            (true, false) => fn_ += 1,
            (false, true) => fp += 1,
            (false, false) => tn += 1,
        }
    }
    Ok(RateCounts::new(tp, fp, fn_, tn))
}

/// Evaluates `kind` on exact counts.
///
/// Precision at zero predicted positives is defined as 1.0 (no emitted
/// prediction is wrong). Rates whose denominator population is empty are an
/// error rather than NaN.
pub fn rate(counts: &RateCounts, kind: RateKind) -> Result<f64> {
    let needs_pos = |v: usize| -> Result<f64> {
        if counts.n_pos == 0 {
            Err(IrcoError::UndefinedRate {
                kind,
                needs: "positive examples",
            })
        } else {
            Ok(v as f64 / counts.n_pos as f64)
        }
    };
    match kind {
        RateKind::Fpr => {
            if counts.n_neg == 0 {
                Err(IrcoError::UndefinedRate {
                    kind,
                    needs: "negative examples",
                })
            } else {
                Ok(counts.fp as f64 / counts.n_neg as f64)
            }
        }
        RateKind::Fnr => needs_pos(counts.fn_),
        RateKind::Tpr | RateKind::Recall => needs_pos(counts.tp),
        RateKind::Precision => {
            let pp = counts.tp + counts.fp;
            if pp == 0 {
                Ok(1.0)
            } else {
                Ok(counts.tp as f64 / pp as f64)
            }
        }
        RateKind::Coverage | RateKind::GroupCoverage(_) => {
            if counts.total() == 0 {
                Err(IrcoError::UndefinedRate {
                    kind,
                    needs: "examples",
                })
            } else {
                Ok((counts.tp + counts.fp) as f64 / counts.total() as f64)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Threshold sweep
// ---------------------------------------------------------------------------

/// Side of a rate target a solved threshold must land on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    AtMost,
    AtLeast,
}

/// Counts at every distinguishable threshold, in ascending threshold order.
///
/// `cands[0]` is the low sentinel `-(max|score| + 1)` (everything predicted
/// positive), `cands.last()` the high sentinel (nothing predicted positive),
/// and the interior entries are midpoints between adjacent distinct scores.
/// Midpoints are assumed to separate their neighbours, which holds unless two
/// distinct scores are adjacent representable floats.
pub(crate) struct Sweep {
    pub cands: Vec<f64>,
    pub tp: Vec<usize>,
    pub fp: Vec<usize>,
    pub n_pos: usize,
    pub n_neg: usize,
}

impl Sweep {
    pub fn counts_at(&self, idx: usize) -> RateCounts {
        RateCounts {
            tp: self.tp[idx],
            fp: self.fp[idx],
            fn_: self.n_pos - self.tp[idx],
            tn: self.n_neg - self.fp[idx],
            n_pos: self.n_pos,
            n_neg: self.n_neg,
        }
    }
}

pub(crate) fn sweep(scores: &[f64], labels: &[u8]) -> Result<Sweep> {
    if scores.is_empty() {
        return Err(IrcoError::EmptyBatch { context: "sweep" });
    }
    if scores.len() != labels.len() {
        return Err(IrcoError::DimensionMismatch {
            context: "sweep labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    check_labels(labels, "sweep")?;
    if let Some(&bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(IrcoError::InvalidInput(format!(
            "sweep: scores must be finite, got {bad}"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    let n_pos = labels.iter().filter(|&&y| y == 1).count();
    let n_neg = labels.len() - n_pos;
    let max_abs = scores.iter().fold(0.0f64, |m, s| m.max(s.abs()));
    let sentinel = max_abs + 1.0;

    let mut cands = Vec::new();
    let mut tps = Vec::new();
    let mut fps = Vec::new();

    // Low sentinel: every example is predicted positive.
    cands.push(-sentinel);
    tps.push(n_pos);
    fps.push(n_neg);

    let (mut tp, mut fp) = (n_pos, n_neg);
    let mut i = 0;
    while i < order.len() {
        // Consume the group of examples tied at this score; they flip to
        // predicted-negative together.
        let s = scores[order[i]];
        while i < order.len() && scores[order[i]] == s {
            if labels[order[i]] == 1 {
                tp -= 1;
            } else {
                fp -= 1;
            }
            i += 1;
        }
        let cand = if i < order.len() {
            (s + scores[order[i]]) / 2.0
        } else {
            sentinel
        };
        cands.push(cand);
        tps.push(tp);
        fps.push(fp);
    }

    Ok(Sweep {
        cands,
        tp: tps,
        fp: fps,
        n_pos,
        n_neg,
    })
}

fn check_population(kind: RateKind, sw: &Sweep) -> Result<()> {
    match kind {
        RateKind::Fpr if sw.n_neg == 0 => Err(IrcoError::UndefinedRate {
            kind,
            needs: "negative examples",
        }),
        RateKind::Fnr | RateKind::Tpr | RateKind::Recall if sw.n_pos == 0 => {
            Err(IrcoError::UndefinedRate {
                kind,
                needs: "positive examples",
            })
        }
        _ => Ok(()),
    }
}

/// Selects the sweep index satisfying `rate sense target` whose rate is
/// closest to the target; plateau ties break toward the smallest threshold
/// for at-most (the most permissive feasible cut) and the largest for
/// at-least.
pub(crate) fn select_threshold_index(
    sw: &Sweep,
    kind: RateKind,
    target: f64,
    sense: Sense,
) -> Result<usize> {
    let mut best: Option<(f64, usize)> = None;
    for idx in 0..sw.cands.len() {
        let v = rate(&sw.counts_at(idx), kind)?;
        let feasible = match sense {
            Sense::AtMost => v <= target,
            Sense::AtLeast => v >= target,
        };
        if !feasible {
            continue;
        }
        let better = match (&best, sense) {
            (None, _) => true,
            // Among feasible values the closest to the target is the largest
            // (at-most) or smallest (at-least).
            (Some((bv, _)), Sense::AtMost) => v > *bv,
            (Some((bv, _)), Sense::AtLeast) => v < *bv,
        };
        if better {
            best = Some((v, idx));
        } else if let Some((bv, bi)) = best {
            if v == bv {
                let prefer = match sense {
                    Sense::AtMost => sw.cands[idx] < sw.cands[bi],
                    Sense::AtLeast => sw.cands[idx] > sw.cands[bi],
                };
                if prefer {
                    best = Some((bv, idx));
                }
            }
        }
    }
    best.map(|(_, i)| i).ok_or_else(|| {
        IrcoError::InfeasibleTarget(format!(
            "no threshold attains {kind} {} {target}",
            match sense {
                Sense::AtMost => "<=",
                Sense::AtLeast => ">=",
            }
        ))
    })
}

/// Exact threshold search for a monotone rate.
///
/// Returns the threshold (a midpoint between adjacent distinct sorted scores,
/// or `+/-(max|score| + 1)` at the extremes) whose exact rate satisfies the
/// sense constraint and is closest to `target` among achievable values. For
/// at-most constraints the smallest such midpoint is returned, i.e. the most
/// permissive feasible cut; at-least returns the largest.
pub fn exact_threshold(
    scores: &[f64],
    labels: &[u8],
    kind: RateKind,
    target: f64,
    sense: Sense,
) -> Result<f64> {
    if !kind.is_monotone() {
        return Err(IrcoError::NonMonotoneRate { kind });
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(IrcoError::InvalidInput(format!(
            "exact_threshold: target must be in [0, 1], got {target}"
        )));
    }
    let sw = sweep(scores, labels)?;
    check_population(kind, &sw)?;
    let idx = select_threshold_index(&sw, kind, target, sense)?;
    Ok(sw.cands[idx])
}

/// Threshold admitting a predicted-positive count as close to `k` as the
/// score ties allow. A tie across the cut boundary moves as a block; when `k`
/// is unachievable the closest achievable count wins, preferring the smaller
/// count (the higher threshold).
pub fn exact_count_threshold(scores: &[f64], labels: &[u8], k: usize) -> Result<f64> {
    let sw = sweep(scores, labels)?;
    let mut best = 0usize;
    let mut best_gap = i64::MAX;
    // Iterate descending thresholds so "prefer the smaller count" means
    // keeping the first candidate seen at a given gap.
    for idx in (0..sw.cands.len()).rev() {
        let count = (sw.tp[idx] + sw.fp[idx]) as i64;
        let gap = (count - k as i64).abs();
        if gap < best_gap {
            best_gap = gap;
            best = idx;
        }
    }
    Ok(sw.cands[best])
}

// ---------------------------------------------------------------------------
// Curves and areas
// ---------------------------------------------------------------------------

/// One operating point of a threshold curve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub threshold: f64,
    pub x: f64,
    pub y: f64,
}

fn check_both_classes(sw: &Sweep, context: &'static str) -> Result<()> {
    if sw.n_pos == 0 || sw.n_neg == 0 {
        return Err(IrcoError::SingleClassBatch { context });
    }
    Ok(())
}

/// ROC operating points (x = FPR, y = TPR), one per distinguishable
/// threshold, sorted by x non-decreasing. Endpoints (0,0) and (1,1) are the
/// sentinel thresholds.
pub fn roc_points(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>> {
    let sw = sweep(scores, labels)?;
    check_both_classes(&sw, "roc_points")?;
    Ok((0..sw.cands.len())
        .rev()
        .map(|i| CurvePoint {
            threshold: sw.cands[i],
            x: sw.fp[i] as f64 / sw.n_neg as f64,
            y: sw.tp[i] as f64 / sw.n_pos as f64,
        })
        .collect())
}

/// Precision-recall operating points (x = recall, y = precision), sorted by
/// recall non-decreasing. Zero predicted positives carry precision 1.0.
pub fn pr_points(scores: &[f64], labels: &[u8]) -> Result<Vec<CurvePoint>> {
    let sw = sweep(scores, labels)?;
    check_both_classes(&sw, "pr_points")?;
    Ok((0..sw.cands.len())
        .rev()
        .map(|i| {
            let pp = sw.tp[i] + sw.fp[i];
            CurvePoint {
                threshold: sw.cands[i],
                x: sw.tp[i] as f64 / sw.n_pos as f64,
                y: if pp == 0 {
                    1.0
                } else {
                    sw.tp[i] as f64 / pp as f64
                },
            }
        })
        .collect())
}

/// Full ROC area by trapezoid rule. Equals the pairwise comparison statistic
/// with half credit for score ties.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let pts = roc_points(scores, labels)?;
    let mut area = 0.0;
    for w in pts.windows(2) {
        area += (w[1].x - w[0].x) * (w[0].y + w[1].y) / 2.0;
    }
    Ok(area)
}

/// Partial ROC area up to an FPR budget, Riemann-style.
///
/// `raw` is the mean exact TPR over the `grid_m` thresholds that best attain
/// FPR targets equally spaced in `(0, beta]` from below. `mcclish` rescales
/// raw so a chance classifier sits near 50 and a perfect one at exactly 100:
/// `100 * 0.5 * (1 + (raw*beta - beta^2/2) / (beta - beta^2/2))`.
pub fn partial_auc_roc(
    scores: &[f64],
    labels: &[u8],
    beta: f64,
    grid_m: usize,
) -> Result<(f64, f64)> {
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(IrcoError::InvalidInput(format!(
            "partial_auc_roc: beta must be in (0, 1], got {beta}"
        )));
    }
    if grid_m == 0 {
        return Err(IrcoError::InvalidInput(
            "partial_auc_roc: grid_m must be positive".into(),
        ));
    }
    let sw = sweep(scores, labels)?;
    check_both_classes(&sw, "partial_auc_roc")?;
    let mut sum_tpr = 0.0;
    for i in 1..=grid_m {
        let target = beta * i as f64 / grid_m as f64;
        let idx = select_threshold_index(&sw, RateKind::Fpr, target, Sense::AtMost)?;
        sum_tpr += sw.tp[idx] as f64 / sw.n_pos as f64;
    }
    let raw = sum_tpr / grid_m as f64;
    let chance = beta * beta / 2.0;
    let mcclish = 100.0 * 0.5 * (1.0 + (raw * beta - chance) / (beta - chance));
    Ok((raw, mcclish))
}

/// Partial PR area: mean exact precision over `grid_m` thresholds attaining
/// recall targets equally spaced in `[beta, 1]` (1.0 always included).
pub fn partial_auc_pr(scores: &[f64], labels: &[u8], beta: f64, grid_m: usize) -> Result<f64> {
    if !(0.0..1.0).contains(&beta) {
        return Err(IrcoError::InvalidInput(format!(
            "partial_auc_pr: beta must be in [0, 1), got {beta}"
        )));
    }
    if grid_m == 0 {
        return Err(IrcoError::InvalidInput(
            "partial_auc_pr: grid_m must be positive".into(),
        ));
    }
    let sw = sweep(scores, labels)?;
    check_both_classes(&sw, "partial_auc_pr")?;
    let mut sum_prec = 0.0;
    for i in 0..grid_m {
        let target = recall_grid_target(beta, grid_m, i);
        let idx = select_threshold_index(&sw, RateKind::Recall, target, Sense::AtLeast)?;
        let counts = sw.counts_at(idx);
        sum_prec += rate(&counts, RateKind::Precision)?;
    }
    Ok(sum_prec / grid_m as f64)
}

/// The i-th recall target of the `[beta, 1]` grid; the last entry is exactly 1.
pub fn recall_grid_target(beta: f64, grid_m: usize, i: usize) -> f64 {
    if grid_m == 1 {
        1.0
    } else {
        beta + (1.0 - beta) * i as f64 / (grid_m - 1) as f64
    }
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------
