//! Online meta-gradient rules that adapt per-parameter weight decay (FADE),
//! per-parameter step sizes (IDBD), or both.
//!
//! Each rule is one online step on a linear predictor. Decay rates and step
//! sizes are parameterized through exponential links, `lambda = exp(gamma)` and
//! `alpha = exp(beta)`, and their meta-parameters move along forward-mode
//! sensitivity traces (`g ~ dw/dgamma`, `h ~ dw/dbeta`) that each cost one extra
//! scalar per weight.
//!
//! Within a step the order is fixed: the error uses the pre-update weights, the
//! meta-parameters move using the previous traces, the exponentials are
//! recomputed, the traces are refreshed from the pre-update weights and the new
//! rates, and the weight moves last. Every trace decay factor is positive
//! bounded, `[.]^+ = max(., 0)`.
//!
//! The negative loss gradient of weight `i`, `delta * x_i`, is formed once per
//! step and shared by the meta, trace and weight updates.

mod head;
mod linear;

pub use head::{fade_adam_head_step, fade_ce_head_step, fade_mse_head_step, softmax_into, FadeHead, HeadOutput, HeadTarget};
pub use linear::{coupled_step, fade_idbd_step, fade_step, idbd_step, idbd_wd_step};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MetaError {
    #[error("length mismatch: {params} parameters but {input} input entries")]
    LengthMismatch { params: usize, input: usize },
    #[error("non-finite input at index {index}")]
    NonFiniteInput { index: usize },
    #[error("non-finite target")]
    NonFiniteTarget,
    #[error("non-finite prediction")]
    NonFinitePrediction,
    #[error("non-finite {field} for parameter {index}")]
    NonFiniteState { index: usize, field: &'static str },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("a classification head needs at least two classes, got {0}")]
    TooFewClasses(usize),
}

/// Hyperparameters shared by the rule family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetaHyper {
    /// Base step size where it is not adapted (FADE-only rules, network heads).
    pub alpha: f64,
    /// Meta step size for `beta` (log step size).
    pub theta_alpha: f64,
    /// Meta step size for `gamma` (log decay). Zero freezes the decay exactly.
    pub theta_lambda: f64,
    pub gamma0: f64,
    pub beta0: f64,
    /// Clamp `gamma <= 0` so that `lambda <= 1`. Off by default.
    pub clamp_decay: bool,
}

impl Default for MetaHyper {
    fn default() -> Self {
        Self {
            alpha: 0.0,
            theta_alpha: 0.0,
            theta_lambda: 0.0,
            gamma0: f64::NEG_INFINITY,
            beta0: f64::NEG_INFINITY,
            clamp_decay: false,
        }
    }
}

/// Weight with an adaptive decay rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadeParam {
    pub w: f64,
    /// Log decay rate.
    pub gamma: f64,
    /// Decay rate, always `exp(gamma)`.
    pub lambda: f64,
    /// Sensitivity trace `dw/dgamma`.
    pub g: f64,
}

impl FadeParam {
    pub fn new(w: f64, gamma: f64) -> Self {
        Self {
            w,
            gamma,
            lambda: gamma.exp(),
            g: 0.0,
        }
    }
}

/// Weight with an adaptive step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdbdParam {
    pub w: f64,
    /// Log step size.
    pub beta: f64,
    /// Step size, always `exp(beta)`.
    pub alpha: f64,
    /// Sensitivity trace `dw/dbeta`.
    pub h: f64,
}

impl IdbdParam {
    pub fn new(w: f64, beta: f64) -> Self {
        Self {
            w,
            beta,
            alpha: beta.exp(),
            h: 0.0,
        }
    }
}

/// Weight with both an adaptive decay rate and an adaptive step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FadeIdbdParam {
    pub w: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub g: f64,
    pub beta: f64,
    pub alpha: f64,
    pub h: f64,
}

impl FadeIdbdParam {
    pub fn new(w: f64, gamma: f64, beta: f64) -> Self {
        Self {
            w,
            gamma,
            lambda: gamma.exp(),
            g: 0.0,
            beta,
            alpha: beta.exp(),
            h: 0.0,
        }
    }
}

/// Decay meta-state for one weight stored elsewhere (a network head entry).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayTrace {
    pub gamma: f64,
    pub lambda: f64,
    pub g: f64,
}

impl DecayTrace {
    pub fn new(gamma: f64) -> Self {
        Self {
            gamma,
            lambda: gamma.exp(),
            g: 0.0,
        }
    }
}

/// Result of one online step: the pre-update prediction and its error.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutput {
    pub prediction: f64,
    pub error: f64,
}

#[inline]
pub(crate) fn positive(v: f64) -> f64 {
    v.max(0.0)
}

/// One meta-parameter step `log_rate + theta * neg_grad * trace`.
#[inline]
pub(crate) fn meta_update(log_rate: f64, theta: f64, neg_grad: f64, trace: f64) -> f64 {
    log_rate + theta * neg_grad * trace
}

#[inline]
pub(crate) fn clamp_log_decay(gamma: f64, clamp: bool) -> f64 {
    if clamp {
        gamma.min(0.0)
    } else {
        gamma
    }
}

/// Reject non-finite inputs and return `<w, x>` (sequential sum) with its error.
pub(crate) fn predict_checked(
    weights: impl Iterator<Item = f64>,
    x: &[f64],
    y_star: f64,
) -> Result<StepOutput, MetaError> {
    if let Some(index) = x.iter().position(|v| !v.is_finite()) {
        return Err(MetaError::NonFiniteInput { index });
    }
    if !y_star.is_finite() {
        return Err(MetaError::NonFiniteTarget);
    }
    let mut prediction = 0.0;
    for (w, &xi) in weights.zip(x) {
        prediction += w * xi;
    }
    if !prediction.is_finite() {
        return Err(MetaError::NonFinitePrediction);
    }
    Ok(StepOutput {
        prediction,
        error: y_star - prediction,
    })
}

pub(crate) fn check_len(params: usize, input: usize) -> Result<(), MetaError> {
    if params == input {
        Ok(())
    } else {
        Err(MetaError::LengthMismatch { params, input })
    }
}

pub(crate) fn finite(index: usize, field: &'static str, v: f64) -> Result<f64, MetaError> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(MetaError::NonFiniteState { index, field })
    }
}
