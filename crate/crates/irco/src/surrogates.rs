//! Temperature-scaled smooth relaxations of threshold counts.
//!
//! The step `1[score > lambda]` is replaced by `sigma_tau(score - lambda)`
//! where `sigma_tau(x)` is either a sigmoid `1/(1 + exp(-tau x))` or a
//! softplus `log(1 + exp(tau x))`. Every smoothed count depends on the pair
//! `(score_i, lambda)` only through their difference, so the threshold
//! derivative of any count is the negated sum of its per-example score
//! derivatives, and the mixed second derivative is the negated per-example
//! second derivative. The rate evaluators below exploit that throughout.
//!
//! Second derivatives are carried because the curvature regularizer in the
//! trainer differentiates `(dg/dlambda)^2` with respect to model parameters.

use serde::{Deserialize, Serialize};

use crate::error::{IrcoError, Result};
use crate::metrics::RateKind;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SurrogateKind {
    Sigmoid,
    Softplus,
}

/// A smooth step with temperature `tau`; larger `tau` is closer to the hard
/// indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Surrogate {
    pub kind: SurrogateKind,
    #[serde(rename = "temperature")]
    pub tau: f64,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

impl Surrogate {
    pub fn new(kind: SurrogateKind, tau: f64) -> Result<Self> {
        let s = Surrogate { kind, tau };
        s.validate()?;
        Ok(s)
    }

    pub fn sigmoid(tau: f64) -> Result<Self> {
        Surrogate::new(SurrogateKind::Sigmoid, tau)
    }

    pub fn softplus(tau: f64) -> Result<Self> {
        Surrogate::new(SurrogateKind::Softplus, tau)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(IrcoError::InvalidInput(format!(
                "surrogate temperature must be finite and positive, got {}",
                self.tau
            )));
        }
        Ok(())
    }

    /// sigma_tau(x). Saturates cleanly for |tau*x| beyond exp range.
    pub fn value(&self, x: f64) -> f64 {
        let z = self.tau * x;
        match self.kind {
            SurrogateKind::Sigmoid => sigmoid(z),
            SurrogateKind::Softplus => softplus(z),
        }
    }

    /// d sigma_tau / dx.
    pub fn d1(&self, x: f64) -> f64 {
        let z = self.tau * x;
        let s = sigmoid(z);
        match self.kind {
            SurrogateKind::Sigmoid => self.tau * s * (1.0 - s),
            SurrogateKind::Softplus => self.tau * s,
        }
    }

    /// d^2 sigma_tau / dx^2.
    pub fn d2(&self, x: f64) -> f64 {
        let z = self.tau * x;
        let s = sigmoid(z);
        match self.kind {
            SurrogateKind::Sigmoid => self.tau * self.tau * s * (1.0 - s) * (1.0 - 2.0 * s),
            SurrogateKind::Softplus => self.tau * self.tau * s * (1.0 - s),
        }
    }
}

// ---------------------------------------------------------------------------
// Smoothed counts
// ---------------------------------------------------------------------------

/// Smoothed confusion counts at a threshold, with the per-example derivative
/// state needed to assemble any rate's gradient in one pass.
///
/// "Above" refers to `sigma_tau(score - lambda)` (the smooth predicted
/// positive indicator), "below" to `sigma_tau(lambda - score)`.
#[derive(Debug, Clone)]
pub struct SmoothCounts {
    pub tp: f64,
    pub fp: f64,
    pub fn_: f64,
    pub tn: f64,
    pub pp: f64,
    pub n_pos: usize,
    pub n_neg: usize,
    labels: Vec<u8>,
    d_above: Vec<f64>,
    d2_above: Vec<f64>,
    d_below: Vec<f64>,
    d2_below: Vec<f64>,
    agg: Aggregates,
}

#[derive(Debug, Clone, Copy, Default)]
struct Aggregates {
    d_above_pos: f64,
    d_above_neg: f64,
    d_below_pos: f64,
    d_below_neg: f64,
    d2_above_pos: f64,
    d2_above_neg: f64,
    d2_below_pos: f64,
    d2_below_neg: f64,
}

/// Smoothed counts of `scores` against `labels` at `lambda`.
pub fn smooth_counts(
    scores: &[f64],
    labels: &[u8],
    lambda: f64,
    surrogate: &Surrogate,
) -> Result<SmoothCounts> {
    surrogate.validate()?;
    if scores.is_empty() {
        return Err(IrcoError::EmptyBatch {
            context: "smooth_counts",
        });
    }
    if scores.len() != labels.len() {
        return Err(IrcoError::DimensionMismatch {
            context: "smooth_counts labels",
            expected: scores.len(),
            got: labels.len(),
        });
    }
    if !lambda.is_finite() {
        return Err(IrcoError::InvalidInput(format!(
            "smooth_counts: threshold must be finite, got {lambda}"
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l > 1) {
        return Err(IrcoError::InvalidInput(format!(
            "smooth_counts: labels must be 0 or 1, got {bad}"
        )));
    }

    let n = scores.len();
    let mut tp = 0.0;
    let mut fp = 0.0;
    let mut fn_ = 0.0;
    let mut tn = 0.0;
    let mut d_above = Vec::with_capacity(n);
    let mut d2_above = Vec::with_capacity(n);
    let mut d_below = Vec::with_capacity(n);
    let mut d2_below = Vec::with_capacity(n);
    let mut agg = Aggregates::default();
    let mut n_pos = 0usize;

    for (&s, &y) in scores.iter().zip(labels) {
        let above = surrogate.value(s - lambda);
        let below = surrogate.value(lambda - s);
        // Derivatives with respect to the example's score.
        let da = surrogate.d1(s - lambda);
        let dda = surrogate.d2(s - lambda);
        let db = -surrogate.d1(lambda - s);
        let ddb = surrogate.d2(lambda - s);
        d_above.push(da);
        d2_above.push(dda);
        d_below.push(db);
        d2_below.push(ddb);
        if y == 1 {
            n_pos += 1;
            tp += above;
            fn_ += below;
            agg.d_above_pos += da;
            agg.d_below_pos += db;
            agg.d2_above_pos += dda;
            agg.d2_below_pos += ddb;
        } else {
            fp += above;
            tn += below;
            agg.d_above_neg += da;
            agg.d_below_neg += db;
            agg.d2_above_neg += dda;
            agg.d2_below_neg += ddb;
        }
    }

    Ok(SmoothCounts {
        tp,
        fp,
        fn_,
        tn,
        // pp defined as tp + fp keeps the count identity exact.
        pp: tp + fp,
        n_pos,
        n_neg: n - n_pos,
        labels: labels.to_vec(),
        d_above,
        d2_above,
        d_below,
        d2_below,
        agg,
    })
}

impl SmoothCounts {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// A smoothed rate with the derivatives the implicit-gradient machinery
/// consumes: value, first and second threshold derivatives, per-example score
/// derivatives, and the mixed threshold/score second derivative.
#[derive(Debug, Clone)]
pub struct SmoothEval {
    pub value: f64,
    pub d_lambda: f64,
    pub d2_lambda: f64,
    pub d_score: Vec<f64>,
    pub d2_lambda_score: Vec<f64>,
}

/// Role masks: which label class contributes, and whether the count is an
/// "above" or "below" sum.
#[derive(Clone, Copy)]
enum Mask {
    Pos,
    Neg,
    All,
}

impl SmoothCounts {
    fn in_mask(&self, i: usize, mask: Mask) -> bool {
        match mask {
            Mask::Pos => self.labels[i] == 1,
            Mask::Neg => self.labels[i] == 0,
            Mask::All => true,
        }
    }

    /// Linear rate: (sum of an above/below count over `mask`) / denom.
    fn linear_rate(&self, numer: f64, mask: Mask, above: bool, denom: f64) -> SmoothEval {
        let n = self.len();
        let (d, dd): (&[f64], &[f64]) = if above {
            (&self.d_above, &self.d2_above)
        } else {
            (&self.d_below, &self.d2_below)
        };
        let mut d_score = vec![0.0; n];
        let mut d2_ls = vec![0.0; n];
        for i in 0..n {
            if self.in_mask(i, mask) {
                d_score[i] = d[i] / denom;
                d2_ls[i] = -dd[i] / denom;
            }
        }
        let (sum_d, sum_dd) = match (mask, above) {
            (Mask::Pos, true) => (self.agg.d_above_pos, self.agg.d2_above_pos),
            (Mask::Neg, true) => (self.agg.d_above_neg, self.agg.d2_above_neg),
            (Mask::All, true) => (
                self.agg.d_above_pos + self.agg.d_above_neg,
                self.agg.d2_above_pos + self.agg.d2_above_neg,
            ),
            (Mask::Pos, false) => (self.agg.d_below_pos, self.agg.d2_below_pos),
            (Mask::Neg, false) => (self.agg.d_below_neg, self.agg.d2_below_neg),
            (Mask::All, false) => (
                self.agg.d_below_pos + self.agg.d_below_neg,
                self.agg.d2_below_pos + self.agg.d2_below_neg,
            ),
        };
        SmoothEval {
            value: numer / denom,
            d_lambda: -sum_d / denom,
            d2_lambda: sum_dd / denom,
            d_score,
            d2_lambda_score: d2_ls,
        }
    }
}

/// Evaluates a smoothed rate and its derivatives from smoothed counts.
///
/// `GroupCoverage` is arithmetically plain coverage; callers restrict the
/// counts to the group first. Precision is the one genuine quotient
/// (`tp / pp`); its denominator must not have underflowed to zero.
pub fn smooth_rate(kind: RateKind, counts: &SmoothCounts) -> Result<SmoothEval> {
    let np = counts.n_pos as f64;
    let nn = counts.n_neg as f64;
    let n = counts.len() as f64;
    match kind {
        RateKind::Fnr => {
            if counts.n_pos == 0 {
                return Err(IrcoError::UndefinedRate {
                    kind,
                    needs: "positive examples",
                });
            }
            Ok(counts.linear_rate(counts.fn_, Mask::Pos, false, np))
        }
        RateKind::Tpr | RateKind::Recall => {
            if counts.n_pos == 0 {
                return Err(IrcoError::UndefinedRate {
                    kind,
                    needs: "positive examples",
                });
            }
            Ok(counts.linear_rate(counts.tp, Mask::Pos, true, np))
        }
        RateKind::Fpr => {
            if counts.n_neg == 0 {
                return Err(IrcoError::UndefinedRate {
                    kind,
                    needs: "negative examples",
                });
            }
            Ok(counts.linear_rate(counts.fp, Mask::Neg, true, nn))
        }
        RateKind::Coverage | RateKind::GroupCoverage(_) => {
            Ok(counts.linear_rate(counts.pp, Mask::All, true, n))
        }
        RateKind::Precision => {
            let u = counts.tp;
            let v = counts.pp;
            if v <= 1e-300 {
                return Err(IrcoError::DegenerateDenominator {
                    what: "smoothed predicted positives",
                    value: v,
                    floor: 1e-300,
                });
            }
            let u_l = -counts.agg.d_above_pos;
            let v_l = -(counts.agg.d_above_pos + counts.agg.d_above_neg);
            let u_ll = counts.agg.d2_above_pos;
            let v_ll = counts.agg.d2_above_pos + counts.agg.d2_above_neg;
            let value = u / v;
            let d_lambda = (u_l * v - u * v_l) / (v * v);
            let d2_lambda =
                (u_ll * v - u * v_ll) / (v * v) - 2.0 * v_l * (u_l * v - u * v_l) / (v * v * v);
            let len = counts.len();
            let mut d_score = vec![0.0; len];
            let mut d2_ls = vec![0.0; len];
            for i in 0..len {
                let pos = counts.labels[i] == 1;
                let u_p = if pos { counts.d_above[i] } else { 0.0 };
                let v_p = counts.d_above[i];
                let u_lp = if pos { -counts.d2_above[i] } else { 0.0 };
                let v_lp = -counts.d2_above[i];
                d_score[i] = (u_p * v - u * v_p) / (v * v);
                d2_ls[i] = (u_lp * v + u_l * v_p - u_p * v_l - u * v_lp) / (v * v)
                    - 2.0 * v_p * (u_l * v - u * v_l) / (v * v * v);
            }
            Ok(SmoothEval {
                value,
                d_lambda,
                d2_lambda,
                d_score,
                d2_lambda_score: d2_ls,
            })
        }
    }
}

/// Smoothed predicted-positive count `pp` with the same derivative bundle,
/// un-normalized. Used by count-form constraints (top-K).
pub fn smooth_positive_count(counts: &SmoothCounts) -> SmoothEval {
    counts.linear_rate(counts.pp, Mask::All, true, 1.0)
}

/// Smoothed misclassification count `fp + fn` with the same derivative
/// bundle, un-normalized. Negatives contribute their "above" mass and
/// positives their "below" mass, so the two aggregates mix masks.
pub fn smooth_error_count(counts: &SmoothCounts) -> SmoothEval {
    let n = counts.len();
    let mut d_score = vec![0.0; n];
    let mut d2_ls = vec![0.0; n];
    for i in 0..n {
        if counts.labels[i] == 0 {
            d_score[i] = counts.d_above[i];
            d2_ls[i] = -counts.d2_above[i];
        } else {
            d_score[i] = counts.d_below[i];
            d2_ls[i] = -counts.d2_below[i];
        }
    }
    SmoothEval {
        value: counts.fp + counts.fn_,
        d_lambda: -(counts.agg.d_above_neg + counts.agg.d_below_pos),
        d2_lambda: counts.agg.d2_above_neg + counts.agg.d2_below_pos,
        d_score,
        d2_lambda_score: d2_ls,
    }
}
