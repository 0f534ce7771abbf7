//! A network trained online by a body optimizer, optionally with FADE on its head.
//!
//! One step: forward on the pre-update weights, backpropagate through the
//! pre-update head, update the head, update the hidden layers, then clip.

use serde::{Deserialize, Serialize};

use super::{Gradients, MlpNet, NetError};
use crate::baselines::{adam_step, sgd_step, weight_clip, AdamConsts, AdamState, ClipSpec};
use crate::meta_optim::{softmax_into, FadeHead, HeadTarget, MetaHyper};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// `0.5 * sum_k (y_k - out_k)^2`.
    SquaredError,
    /// Softmax cross-entropy over the outputs.
    CrossEntropy,
}

/// Optimizer for every layer not covered by a FADE head rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum BodyOptimizer {
    Sgd {
        alpha: f64,
        lambda: f64,
    },
    Adam {
        alpha: f64,
        lambda: f64,
        /// Per layer: `(weights, bias)` moments.
        states: Vec<(AdamState, AdamState)>,
    },
    ClippedSgd {
        alpha: f64,
        clips: Vec<ClipSpec>,
    },
}

impl BodyOptimizer {
    pub fn adam(net: &MlpNet, alpha: f64, lambda: f64, consts: AdamConsts) -> Self {
        let states = net
            .layers()
            .iter()
            .map(|l| (AdamState::new(l.weights.len(), consts), AdamState::new(l.bias.len(), consts)))
            .collect();
        BodyOptimizer::Adam { alpha, lambda, states }
    }

    /// Clip every layer to `kappa` times its init bound.
    pub fn clipped_sgd(net: &MlpNet, alpha: f64, kappa: f64) -> Self {
        let clips = net.layers().iter().map(|l| ClipSpec::new(kappa, l.init_bound)).collect();
        BodyOptimizer::ClippedSgd { alpha, clips }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum HeadRule {
    /// The head is trained by the body optimizer.
    Shared,
    Fade { head: FadeHead, hyper: MetaHyper },
}

/// Loss and accuracy of one sample, scored on the pre-update weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepMetrics {
    /// Mean over outputs of the squared error (regression) or cross-entropy (classification).
    pub loss: f64,
    /// Whether the arg-max output matched the label; `None` for regression.
    pub correct: Option<bool>,
}

#[derive(Debug, Clone)]
pub struct ComposedLearner {
    net: MlpNet,
    body: BodyOptimizer,
    head: HeadRule,
    loss: LossKind,
    grads: Gradients,
    residual: Vec<f64>,
    loss_grad: Vec<f64>,
    curvature: Vec<f64>,
    probs: Vec<f64>,
}

impl ComposedLearner {
    pub fn new(net: MlpNet, body: BodyOptimizer, head: HeadRule, loss: LossKind) -> Self {
        let n = net.output_dim();
        let grads = net.gradients();
        Self {
            net,
            body,
            head,
            loss,
            grads,
            residual: vec![0.0; n],
            loss_grad: vec![0.0; n],
            curvature: vec![0.0; n],
            probs: vec![0.0; n],
        }
    }

    pub fn net(&self) -> &MlpNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut MlpNet {
        &mut self.net
    }

    pub fn head_rule(&self) -> &HeadRule {
        &self.head
    }

    pub fn body(&self) -> &BodyOptimizer {
        &self.body
    }

    pub fn loss_kind(&self) -> LossKind {
        self.loss
    }

    /// Forward pass on the current weights.
    pub fn predict(&mut self, input: &[f64]) -> Result<&[f64], NetError> {
        self.net.forward(input)
    }

    /// Update on `target` for the input of the most recent [`ComposedLearner::predict`].
    pub fn learn(&mut self, target: HeadTarget<'_>) -> Result<(), NetError> {
        let out = self.net.output().ok_or(NetError::StaleCache)?;
        let n = out.len();
        let curvature = match (self.loss, target) {
            (LossKind::SquaredError, HeadTarget::Regression(y)) => {
                if y.len() != n {
                    return Err(NetError::TargetShape { expected: n, got: y.len() });
                }
                for k in 0..n {
                    self.residual[k] = y[k] - out[k];
                }
                false
            }
            (LossKind::CrossEntropy, HeadTarget::Class(label)) => {
                if label >= n {
                    return Err(NetError::LabelOutOfRange { label, classes: n });
                }
                softmax_into(out, &mut self.probs);
                for (k, &p) in self.probs.iter().enumerate() {
                    self.residual[k] = if k == label { 1.0 - p } else { -p };
                    self.curvature[k] = p * (1.0 - p);
                }
                true
            }
            _ => return Err(NetError::TargetKind),
        };
        for (lg, r) in self.loss_grad.iter_mut().zip(&self.residual) {
            *lg = -r;
        }
        let shared = matches!(self.head, HeadRule::Shared);
        self.net.backward(&self.loss_grad, &mut self.grads, shared)?;

        if let HeadRule::Fade { head, hyper } = &mut self.head {
            let (layer, x) = self.net.head_and_features_mut().ok_or(NetError::StaleCache)?;
            let curv = curvature.then_some(&self.curvature[..]);
            head.update(layer, x, &self.residual, curv, hyper)?;
        }

        let n_body = self.net.layers().len() - usize::from(!shared);
        let layers = self.net.layers_mut();
        let grads = &self.grads;
        match &mut self.body {
            BodyOptimizer::Sgd { alpha, lambda } => {
                for (l, layer) in layers[..n_body].iter_mut().enumerate() {
                    sgd_step(&mut layer.weights, &grads.weights[l], *alpha, *lambda);
                    sgd_step(&mut layer.bias, &grads.bias[l], *alpha, *lambda);
                }
            }
            BodyOptimizer::Adam { alpha, lambda, states } => {
                for (l, layer) in layers[..n_body].iter_mut().enumerate() {
                    let (sw, sb) = &mut states[l];
                    adam_step(&mut layer.weights, &grads.weights[l], sw, *alpha, *lambda);
                    adam_step(&mut layer.bias, &grads.bias[l], sb, *alpha, *lambda);
                }
            }
            BodyOptimizer::ClippedSgd { alpha, clips } => {
                for (l, layer) in layers[..n_body].iter_mut().enumerate() {
                    sgd_step(&mut layer.weights, &grads.weights[l], *alpha, 0.0);
                    sgd_step(&mut layer.bias, &grads.bias[l], *alpha, 0.0);
                    weight_clip(&mut layer.weights, &clips[l]);
                    weight_clip(&mut layer.bias, &clips[l]);
                }
            }
        }
        Ok(())
    }

    /// Predict, score, then learn on one sample.
    pub fn step(&mut self, input: &[f64], target: HeadTarget<'_>) -> Result<StepMetrics, NetError> {
        let out = self.predict(input)?;
        let metrics = score(out, target)?;
        self.learn(target)?;
        Ok(metrics)
    }
}

/// Pre-update loss of `out` against `target`.
pub fn score(out: &[f64], target: HeadTarget<'_>) -> Result<StepMetrics, NetError> {
    match target {
        HeadTarget::Regression(y) => {
            if y.len() != out.len() {
                return Err(NetError::TargetShape {
                    expected: out.len(),
                    got: y.len(),
                });
            }
            let se: f64 = y.iter().zip(out).map(|(t, o)| (t - o) * (t - o)).sum();
            Ok(StepMetrics {
                loss: se / out.len() as f64,
                correct: None,
            })
        }
        HeadTarget::Class(label) => {
            if label >= out.len() {
                return Err(NetError::LabelOutOfRange {
                    label,
                    classes: out.len(),
                });
            }
            let max = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + out.iter().map(|z| (z - max).exp()).sum::<f64>().ln();
            let argmax = out
                .iter()
                .enumerate()
                .fold(0, |best, (k, &z)| if z > out[best] { k } else { best });
            Ok(StepMetrics {
                loss: lse - out[label],
                correct: Some(argmax == label),
            })
        }
    }
}
