//! Scoring models: linear or a small ReLU MLP with a scalar head.
//!
//! The training machinery never needs general autodiff. Every gradient in
//! this crate has the shape `d/dtheta sum_i w_i * score_i(theta)` for some
//! per-example weight vector, so the model exposes exactly that
//! vector-Jacobian product and nothing more.

use serde::{Deserialize, Serialize};

use crate::error::{IrcoError, Result};
use crate::matrix::Matrix;
use crate::rng;

/// Architecture of a scorer. Activation is fixed to ReLU; the head is linear
/// and scalar.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden: Vec<usize>,
    #[serde(default = "default_bias")]
    pub bias: bool,
}

fn default_bias() -> bool {
    true
}

impl ArchSpec {
    /// Largest parameter vector a checkpoint or config may describe.
    pub const MAX_PARAMS: usize = 1 << 24;

    pub fn linear(input_dim: usize, bias: bool) -> Self {
        ArchSpec {
            input_dim,
            hidden: Vec::new(),
            bias,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(IrcoError::InvalidInput(
                "arch: input_dim must be at least 1".into(),
            ));
        }
        if self.hidden.iter().any(|&h| h == 0) {
            return Err(IrcoError::InvalidInput(
                "arch: hidden layer sizes must be at least 1".into(),
            ));
        }
        // Bounding the checked total here keeps the plain arithmetic in
        // `param_count` exact for every validated architecture.
        let mut total: usize = 0;
        for w in self.sizes().windows(2) {
            let layer = w[0]
                .checked_mul(w[1])
                .and_then(|p| p.checked_add(if self.bias { w[1] } else { 0 }))
                .and_then(|p| total.checked_add(p));
            match layer {
                Some(t) if t <= Self::MAX_PARAMS => total = t,
                _ => {
                    return Err(IrcoError::InvalidInput(format!(
                        "arch: parameter count exceeds the supported maximum of {}",
                        Self::MAX_PARAMS
                    )));
                }
            }
        }
        Ok(())
    }

    /// Layer sizes including input and the scalar head.
    fn sizes(&self) -> Vec<usize> {
        let mut s = Vec::with_capacity(self.hidden.len() + 2);
        s.push(self.input_dim);
        s.extend_from_slice(&self.hidden);
        s.push(1);
        s
    }

    pub fn param_count(&self) -> usize {
        let sizes = self.sizes();
        sizes
            .windows(2)
            .map(|w| w[0] * w[1] + if self.bias { w[1] } else { 0 })
            .sum()
    }
}

/// Flat parameter vector laid out layer by layer: row-major weight matrix
/// (out x in), then the bias vector when enabled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelParams {
    pub arch: ArchSpec,
    pub theta: Vec<f64>,
}

impl ModelParams {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.theta.len() != self.arch.param_count() {
            return Err(IrcoError::DimensionMismatch {
                context: "model parameter vector",
                expected: self.arch.param_count(),
                got: self.theta.len(),
            });
        }
        if let Some(&bad) = self.theta.iter().find(|t| !t.is_finite()) {
            return Err(IrcoError::InvalidInput(format!(
                "model parameters must be finite, got {bad}"
            )));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let params: ModelParams = serde_json::from_str(s)?;
        params.validate()?;
        Ok(params)
    }

    pub fn from_json_reader<R: std::io::Read>(r: R) -> Result<Self> {
        let params: ModelParams = serde_json::from_reader(r)?;
        params.validate()?;
        Ok(params)
    }
}

/// Glorot-uniform initialization, biases zero, deterministic in `seed`.
pub fn init(arch: &ArchSpec, seed: u64) -> Result<ModelParams> {
    arch.validate()?;
    let sizes = arch.sizes();
    let mut theta = Vec::with_capacity(arch.param_count());
    let mut counter = 0u64;
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
        for _ in 0..fan_in * fan_out {
            let u = rng::f64_at(seed, counter);
            counter += 1;
            theta.push((2.0 * u - 1.0) * a);
        }
        if arch.bias {
            theta.extend(std::iter::repeat(0.0).take(fan_out));
        }
    }
    Ok(ModelParams {
        arch: arch.clone(),
        theta,
    })
}

/// Per-example forward cache: inputs to every layer plus pre-activations.
struct Cache {
    // activations[l] is the input to layer l; activations[0] is the feature row.
    activations: Vec<Vec<f64>>,
}

fn forward_one(params: &ModelParams, x: &[f64], cache: Option<&mut Vec<Vec<f64>>>) -> f64 {
    let sizes = params.arch.sizes();
    let n_layers = sizes.len() - 1;
    let mut offset = 0usize;
    let mut act: Vec<f64> = x.to_vec();
    let mut stored: Vec<Vec<f64>> = Vec::new();
    for l in 0..n_layers {
        let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
        if cache.is_some() {
            stored.push(act.clone());
        }
        let w = &params.theta[offset..offset + fan_in * fan_out];
        offset += fan_in * fan_out;
        let b = if params.arch.bias {
            let b = &params.theta[offset..offset + fan_out];
            offset += fan_out;
            Some(b)
        } else {
            None
        };
        let mut z = vec![0.0; fan_out];
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &w[o * fan_in..(o + 1) * fan_in];
            let mut s = crate::matrix::dot(row, &act);
            if let Some(b) = b {
                s += b[o];
            }
            *zo = s;
        }
        // ReLU on every layer but the head; subgradient 0 at exact kinks.
        if l + 1 < n_layers {
            for zo in z.iter_mut() {
                if *zo <= 0.0 {
                    *zo = 0.0;
                }
            }
        }
        act = z;
    }
    if let Some(c) = cache {
        *c = stored;
    }
    act[0]
}

/// Scores for every row of `features`.
pub fn forward(params: &ModelParams, features: &Matrix) -> Result<Vec<f64>> {
    params.validate()?;
    if features.cols() != params.arch.input_dim {
        return Err(IrcoError::DimensionMismatch {
            context: "forward features",
            expected: params.arch.input_dim,
            got: features.cols(),
        });
    }
    Ok((0..features.rows())
        .map(|i| forward_one(params, features.row(i), None))
        .collect())
}

/// Gradient of `sum_i weights[i] * score_i(theta)` with respect to theta.
///
/// Reverse accumulation through the ReLU stack; the kink convention matches
/// the forward pass (zero subgradient at exactly-zero pre-activations).
pub fn vjp(params: &ModelParams, features: &Matrix, weights: &[f64]) -> Result<Vec<f64>> {
    params.validate()?;
    if features.cols() != params.arch.input_dim {
        return Err(IrcoError::DimensionMismatch {
            context: "vjp features",
            expected: params.arch.input_dim,
            got: features.cols(),
        });
    }
    if weights.len() != features.rows() {
        return Err(IrcoError::DimensionMismatch {
            context: "vjp weights",
            expected: features.rows(),
            got: weights.len(),
        });
    }

    let sizes = params.arch.sizes();
    let n_layers = sizes.len() - 1;
    // Offsets of each layer's weight block and bias block in theta.
    let mut w_off = Vec::with_capacity(n_layers);
    let mut b_off = Vec::with_capacity(n_layers);
    {
        let mut off = 0usize;
        for l in 0..n_layers {
            w_off.push(off);
            off += sizes[l] * sizes[l + 1];
            if params.arch.bias {
                b_off.push(off);
                off += sizes[l + 1];
            } else {
                b_off.push(usize::MAX);
            }
        }
    }

    let mut grad = vec![0.0; params.theta.len()];
    let mut cache = Cache {
        activations: Vec::new(),
    };
    for i in 0..features.rows() {
        let w_i = weights[i];
        if w_i == 0.0 {
            continue;
        }
        forward_one(params, features.row(i), Some(&mut cache.activations));
        // Upstream gradient on the current layer's outputs; head starts at w_i.
        let mut g_out = vec![w_i];
        for l in (0..n_layers).rev() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let a_in = &cache.activations[l];
            let w_block = &params.theta[w_off[l]..w_off[l] + fan_in * fan_out];
            let mut g_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let g = g_out[o];
                if g != 0.0 {
                    let g_row = &mut grad[w_off[l] + o * fan_in..w_off[l] + (o + 1) * fan_in];
                    for (j, gw) in g_row.iter_mut().enumerate() {
                        *gw += g * a_in[j];
                    }
                    if params.arch.bias {
                        grad[b_off[l] + o] += g;
                    }
                    let w_row = &w_block[o * fan_in..(o + 1) * fan_in];
                    for (j, gi) in g_in.iter_mut().enumerate() {
                        *gi += g * w_row[j];
                    }
                }
            }
            if l > 0 {
                // The layer input was relu(z); its cached value is zero
                // exactly where the pre-activation was clamped.
                for (j, gi) in g_in.iter_mut().enumerate() {
                    if cache.activations[l][j] <= 0.0 {
                        *gi = 0.0;
                    }
                }
            }
            g_out = g_in;
        }
    }
    Ok(grad)
}

/// Max relative error between [`vjp`] and central finite differences of the
/// weighted score sum, probing every parameter coordinate.
pub fn grad_check(params: &ModelParams, features: &Matrix, weights: &[f64]) -> Result<f64> {
    let analytic = vjp(params, features, weights)?;
    let loss = |p: &ModelParams| -> Result<f64> {
        let scores = forward(p, features)?;
        Ok(scores.iter().zip(weights).map(|(s, w)| s * w).sum())
    };
    let mut worst = 0.0f64;
    let mut probe = params.clone();
    for j in 0..params.theta.len() {
        let h = 1e-6 * params.theta[j].abs().max(1.0);
        probe.theta[j] = params.theta[j] + h;
        let up = loss(&probe)?;
        probe.theta[j] = params.theta[j] - h;
        let down = loss(&probe)?;
        probe.theta[j] = params.theta[j];
        let fd = (up - down) / (2.0 * h);
        let rel = (analytic[j] - fd).abs() / analytic[j].abs().max(fd.abs()).max(1e-8);
        worst = worst.max(rel);
    }
    Ok(worst)
}
