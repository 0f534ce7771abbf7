//! Reference online optimizers: SGD with decoupled decay, Adam/AdamW, and
//! weight clipping.
//!
//! Decay is always a plain multiplicative factor `(1 - lambda)` applied to the
//! weight, never scaled by the step size.

use serde::{Deserialize, Serialize};

/// `w <- (1 - lambda) w - alpha grad`, elementwise.
///
/// `lambda = 0` is plain SGD; on squared error with `grad = -delta x` this is
/// the delta rule.
pub fn sgd_step(w: &mut [f64], grad: &[f64], alpha: f64, lambda: f64) {
    assert_eq!(w.len(), grad.len(), "sgd_step: weight/gradient length mismatch");
    for (wi, &gi) in w.iter_mut().zip(grad) {
        *wi = (1.0 - lambda) * *wi - alpha * gi;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConsts {
    #[serde(default = "AdamConsts::default_b1")]
    pub b1: f64,
    #[serde(default = "AdamConsts::default_b2")]
    pub b2: f64,
    #[serde(default = "AdamConsts::default_eps")]
    pub eps: f64,
}

impl AdamConsts {
    fn default_b1() -> f64 {
        0.9
    }
    fn default_b2() -> f64 {
        0.999
    }
    fn default_eps() -> f64 {
        1e-8
    }
}

impl Default for AdamConsts {
    fn default() -> Self {
        Self {
            b1: Self::default_b1(),
            b2: Self::default_b2(),
            eps: Self::default_eps(),
        }
    }
}

/// Bias-correction denominators `1 - b1^t` and `1 - b2^t` for the current step.
#[derive(Debug, Clone, Copy)]
pub struct BiasCorrection {
    first: f64,
    second: f64,
}

/// First and second moment buffers for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed steps. Incremented exactly once per optimizer step.
    pub t: u64,
    pub consts: AdamConsts,
}

impl AdamState {
    pub fn new(len: usize, consts: AdamConsts) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
            consts,
        }
    }

    pub fn len(&self) -> usize {
        self.m.len()
    }

    pub fn is_empty(&self) -> bool {
        self.m.is_empty()
    }

    /// Advance the step counter and return the bias corrections for it.
    pub fn begin_step(&mut self) -> BiasCorrection {
        self.t += 1;
        let t = i32::try_from(self.t).unwrap_or(i32::MAX);
        BiasCorrection {
            first: 1.0 - self.consts.b1.powi(t),
            second: 1.0 - self.consts.b2.powi(t),
        }
    }

    /// Fold `grad` into the moments of entry `i`; returns `(m_hat, v_hat)`.
    #[inline]
    pub fn update_moments(&mut self, i: usize, grad: f64, bc: BiasCorrection) -> (f64, f64) {
        let AdamConsts { b1, b2, .. } = self.consts;
        let m = b1 * self.m[i] + (1.0 - b1) * grad;
        let v = b2 * self.v[i] + (1.0 - b2) * (grad * grad);
        self.m[i] = m;
        self.v[i] = v;
        (m / bc.first, v / bc.second)
    }
}

/// One Adam step with decoupled decay:
/// `w <- (1 - lambda_decoupled) w - alpha m_hat / (sqrt(v_hat) + eps)`.
///
/// `lambda_decoupled = 0` is Adam.
pub fn adam_step(w: &mut [f64], grad: &[f64], state: &mut AdamState, alpha: f64, lambda_decoupled: f64) {
    assert_eq!(w.len(), grad.len(), "adam_step: weight/gradient length mismatch");
    assert_eq!(w.len(), state.len(), "adam_step: state sized for a different vector");
    let bc = state.begin_step();
    let eps = state.consts.eps;
    for (i, (wi, &gi)) in w.iter_mut().zip(grad).enumerate() {
        let (m_hat, v_hat) = state.update_moments(i, gi, bc);
        *wi = (1.0 - lambda_decoupled) * *wi - alpha * m_hat / (v_hat.sqrt() + eps);
    }
}

/// Weight-clipping bound for one layer: weights are kept in `[-kappa b, kappa b]`
/// where `b` is the layer's uniform-init bound.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClipSpec {
    pub kappa: f64,
    pub bound: f64,
}

impl ClipSpec {
    pub fn new(kappa: f64, bound: f64) -> Self {
        assert!(kappa > 0.0, "clipping multiplier must be positive");
        Self { kappa, bound }
    }

    pub fn limit(&self) -> f64 {
        self.kappa * self.bound
    }
}

pub fn weight_clip(w: &mut [f64], spec: &ClipSpec) {
    let limit = spec.limit();
    for wi in w {
        *wi = wi.clamp(-limit, limit);
    }
}
