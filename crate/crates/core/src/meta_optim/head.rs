//! FADE on the linear head of a network.
//!
//! Every head weight and every head bias gets its own decay trace. A bias is a
//! weight on a constant input of 1. The trace decay factor uses the local
//! curvature of the loss in the output: 1 for squared error, `p(1 - p)` for
//! softmax cross-entropy. With Adam moments, the step size inside that factor
//! is the effective per-entry rate `alpha / (sqrt(v_hat) + eps)`.

use serde::{Deserialize, Serialize};

use super::{clamp_log_decay, finite, meta_update, positive, DecayTrace, MetaError, MetaHyper};
use crate::baselines::{AdamConsts, AdamState};
use crate::net::Dense;

/// Decay meta-state for a `rows x cols` head plus its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FadeHead {
    rows: usize,
    cols: usize,
    /// Row-major `rows x (cols + 1)`; the last entry of each row belongs to the bias.
    pub traces: Vec<DecayTrace>,
    /// Moments over the same layout when the head runs on Adam.
    pub adam: Option<AdamState>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum HeadTarget<'a> {
    Regression(&'a [f64]),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadOutput {
    /// Pre-update outputs (logits for classification).
    pub outputs: Vec<f64>,
    /// Softmax of `outputs`; empty for regression.
    pub probs: Vec<f64>,
}

impl FadeHead {
    pub fn new(rows: usize, cols: usize, gamma0: f64) -> Self {
        Self {
            rows,
            cols,
            traces: vec![DecayTrace::new(gamma0); rows * (cols + 1)],
            adam: None,
        }
    }

    pub fn with_adam(rows: usize, cols: usize, gamma0: f64, consts: AdamConsts) -> Self {
        let mut head = Self::new(rows, cols, gamma0);
        head.adam = Some(AdamState::new(rows * (cols + 1), consts));
        head
    }

    pub fn for_layer(layer: &Dense, gamma0: f64) -> Self {
        Self::new(layer.fan_out, layer.fan_in, gamma0)
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Trace of weight `(row, col)`; `col == cols` is the bias of `row`.
    pub fn trace(&self, row: usize, col: usize) -> &DecayTrace {
        &self.traces[row * (self.cols + 1) + col]
    }

    /// Decay rates of the weights of output `row`, bias excluded.
    pub fn row_lambdas(&self, row: usize) -> impl Iterator<Item = f64> + '_ {
        let start = row * (self.cols + 1);
        self.traces[start..start + self.cols].iter().map(|t| t.lambda)
    }

    fn check_layer(&self, layer: &Dense, x: &[f64], residual: &[f64]) -> Result<(), MetaError> {
        if layer.fan_in != self.cols || layer.fan_out != self.rows {
            return Err(MetaError::LengthMismatch {
                params: self.rows * self.cols,
                input: layer.fan_in * layer.fan_out,
            });
        }
        super::check_len(self.cols, x.len())?;
        super::check_len(self.rows, residual.len())
    }

    /// One FADE step on `layer` given the features it saw and the per-output
    /// residual `-dL/d(output)`. `curvature[k]` scales `x^2` in the trace factor
    /// of output `k`; `None` means 1.
    pub(crate) fn update(
        &mut self,
        layer: &mut Dense,
        x: &[f64],
        residual: &[f64],
        curvature: Option<&[f64]>,
        hyper: &MetaHyper,
    ) -> Result<(), MetaError> {
        self.check_layer(layer, x, residual)?;
        if let Some(index) = x.iter().position(|v| !v.is_finite()) {
            return Err(MetaError::NonFiniteInput { index });
        }
        let cols = self.cols;
        let row_len = cols + 1;
        let alpha = hyper.alpha;
        let theta = hyper.theta_lambda;
        let bc = self.adam.as_mut().map(AdamState::begin_step);
        for k in 0..self.rows {
            let r = residual[k];
            let c = curvature.map_or(1.0, |c| c[k]);
            for j in 0..row_len {
                let idx = k * row_len + j;
                let (xj, w) = if j < cols {
                    (x[j], &mut layer.weights[k * cols + j])
                } else {
                    (1.0, &mut layer.bias[k])
                };
                let neg_grad = r * xj;
                let (step, dw) = match (self.adam.as_mut(), bc) {
                    (Some(adam), Some(bc)) => {
                        let (m_hat, v_hat) = adam.update_moments(idx, -neg_grad, bc);
                        let denom = v_hat.sqrt() + adam.consts.eps;
                        (alpha / denom, -(alpha * m_hat / denom))
                    }
                    _ => (alpha, alpha * neg_grad),
                };
                let tr = self.traces[idx];
                let gamma = finite(idx, "gamma", clamp_log_decay(meta_update(tr.gamma, theta, neg_grad, tr.g), hyper.clamp_decay))?;
                let lambda = gamma.exp();
                let bracket = positive(1.0 - lambda - step * c * (xj * xj));
                let g = finite(idx, "g", tr.g * bracket - lambda * *w)?;
                let w_new = finite(idx, "w", (1.0 - lambda) * *w + dw)?;
                *w = w_new;
                self.traces[idx] = DecayTrace { gamma, lambda, g };
            }
        }
        Ok(())
    }
}

/// Numerically stable softmax (max logit subtracted).
pub fn softmax_into(logits: &[f64], probs: &mut [f64]) {
    assert_eq!(logits.len(), probs.len());
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (p, &z) in probs.iter_mut().zip(logits) {
        *p = (z - max).exp();
        sum += *p;
    }
    for p in probs.iter_mut() {
        *p /= sum;
    }
}

fn forward(layer: &Dense, x: &[f64]) -> Result<Vec<f64>, MetaError> {
    super::check_len(layer.fan_in, x.len())?;
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(MetaError::NonFiniteInput { index });
    }
    let mut out = vec![0.0; layer.fan_out];
    layer.affine_into(x, &mut out);
    if out.iter().any(|v| !v.is_finite()) {
        return Err(MetaError::NonFinitePrediction);
    }
    Ok(out)
}

fn residual_for(outputs: &[f64], target: HeadTarget<'_>) -> Result<(Vec<f64>, Vec<f64>), MetaError> {
    match target {
        HeadTarget::Regression(y) => {
            super::check_len(outputs.len(), y.len())?;
            if y.iter().any(|v| !v.is_finite()) {
                return Err(MetaError::NonFiniteTarget);
            }
            Ok((y.iter().zip(outputs).map(|(t, o)| t - o).collect(), Vec::new()))
        }
        HeadTarget::Class(label) => {
            let classes = outputs.len();
            if classes < 2 {
                return Err(MetaError::TooFewClasses(classes));
            }
            if label >= classes {
                return Err(MetaError::LabelOutOfRange { label, classes });
            }
            let mut probs = vec![0.0; classes];
            softmax_into(outputs, &mut probs);
            let residual = probs
                .iter()
                .enumerate()
                .map(|(k, &p)| if k == label { 1.0 - p } else { -p })
                .collect();
            Ok((residual, probs))
        }
    }
}

fn head_step(
    layer: &mut Dense,
    head: &mut FadeHead,
    x: &[f64],
    target: HeadTarget<'_>,
    hyper: &MetaHyper,
) -> Result<HeadOutput, MetaError> {
    let outputs = forward(layer, x)?;
    let (residual, probs) = residual_for(&outputs, target)?;
    let curvature: Option<Vec<f64>> = (!probs.is_empty()).then(|| probs.iter().map(|p| p * (1.0 - p)).collect());
    head.update(layer, x, &residual, curvature.as_deref(), hyper)?;
    Ok(HeadOutput { outputs, probs })
}

/// FADE head step on squared error `0.5 * sum_k (y_k - out_k)^2`.
pub fn fade_mse_head_step(
    layer: &mut Dense,
    head: &mut FadeHead,
    x: &[f64],
    y_star: &[f64],
    hyper: &MetaHyper,
) -> Result<HeadOutput, MetaError> {
    head_step(layer, head, x, HeadTarget::Regression(y_star), hyper)
}

/// FADE head step on softmax cross-entropy with integer label.
pub fn fade_ce_head_step(
    layer: &mut Dense,
    head: &mut FadeHead,
    x: &[f64],
    label: usize,
    hyper: &MetaHyper,
) -> Result<HeadOutput, MetaError> {
    head_step(layer, head, x, HeadTarget::Class(label), hyper)
}

/// FADE head step where the weights move by Adam. Moments are created with
/// `consts` on first use.
pub fn fade_adam_head_step(
    layer: &mut Dense,
    head: &mut FadeHead,
    x: &[f64],
    target: HeadTarget<'_>,
    hyper: &MetaHyper,
    consts: AdamConsts,
) -> Result<HeadOutput, MetaError> {
    if head.adam.is_none() {
        head.adam = Some(AdamState::new(head.traces.len(), consts));
    }
    head_step(layer, head, x, target, hyper)
}
