//! Learners behind one online interface: `predict` on the current weights,
//! then `learn` on the same sample.

use serde_json::json;

use super::spec::{LearnerSpec, TaskSpec};
use crate::baselines::sgd_step;
use crate::meta_optim::{
    coupled_step, fade_idbd_step, fade_step, idbd_step, idbd_wd_step, FadeHead, FadeIdbdParam, FadeParam, IdbdParam,
    MetaError, MetaHyper,
};
use crate::net::{Activation, BodyOptimizer, ComposedLearner, HeadRule, LossKind, MlpNet, NetError};
use crate::rng::StreamRng;
use crate::tasks::StreamSample;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LearnError {
    #[error(transparent)]
    Meta(#[from] MetaError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("non-finite prediction")]
    NonFinitePrediction,
}

pub trait OnlineLearner: Send {
    /// Output on the current weights. Must not change any state the next `learn` reads.
    fn predict(&mut self, input: &[f64]) -> Result<&[f64], LearnError>;
    /// One update on `sample`, whose input was just passed to `predict`.
    fn learn(&mut self, sample: &StreamSample) -> Result<(), LearnError>;
    /// Current decay rate of each weight (network heads: row-major, biases excluded).
    fn decay_rates(&self) -> Option<Vec<f64>> {
        None
    }
    /// Full state for fault reports.
    fn dump_state(&self) -> serde_json::Value;
}

enum LinearRule {
    Sgd { w: Vec<f64>, alpha: f64, lambda: f64 },
    Idbd(Vec<IdbdParam>),
    IdbdWd(Vec<IdbdParam>, f64),
    Fade(Vec<FadeParam>),
    FadeIdbd(Vec<FadeIdbdParam>),
    Coupled(Vec<FadeIdbdParam>),
}

/// Online linear regressor with zero-initialized weights.
pub struct LinearLearner {
    rule: LinearRule,
    hyper: MetaHyper,
    grad: Vec<f64>,
    out: [f64; 1],
}

impl LinearLearner {
    pub fn new(spec: &LearnerSpec, d: usize) -> Self {
        let mut hyper = MetaHyper::default();
        let rule = match *spec {
            LearnerSpec::Sgd { alpha } => LinearRule::Sgd { w: vec![0.0; d], alpha, lambda: 0.0 },
            LearnerSpec::SgdWd { alpha, lambda } => LinearRule::Sgd { w: vec![0.0; d], alpha, lambda },
            LearnerSpec::Idbd { theta_alpha, beta0 } => {
                hyper = MetaHyper { theta_alpha, beta0, ..hyper };
                LinearRule::Idbd(vec![IdbdParam::new(0.0, beta0); d])
            }
            LearnerSpec::IdbdWd { theta_alpha, beta0, lambda } => {
                hyper = MetaHyper { theta_alpha, beta0, ..hyper };
                LinearRule::IdbdWd(vec![IdbdParam::new(0.0, beta0); d], lambda)
            }
            LearnerSpec::Fade { alpha, theta_lambda, gamma0, clamp_decay } => {
                hyper = MetaHyper { alpha, theta_lambda, gamma0, clamp_decay, ..hyper };
                LinearRule::Fade(vec![FadeParam::new(0.0, gamma0); d])
            }
            LearnerSpec::FadeIdbd { theta_alpha, theta_lambda, beta0, gamma0, clamp_decay } => {
                hyper = MetaHyper { alpha: 0.0, theta_alpha, theta_lambda, gamma0, beta0, clamp_decay };
                LinearRule::FadeIdbd(vec![FadeIdbdParam::new(0.0, gamma0, beta0); d])
            }
            LearnerSpec::Coupled { theta_alpha, theta_lambda, beta0, gamma0, clamp_decay } => {
                hyper = MetaHyper { alpha: 0.0, theta_alpha, theta_lambda, gamma0, beta0, clamp_decay };
                LinearRule::Coupled(vec![FadeIdbdParam::new(0.0, gamma0, beta0); d])
            }
            ref other => panic!("{} is not a linear method", other.method()),
        };
        Self {
            rule,
            hyper,
            grad: vec![0.0; d],
            out: [0.0],
        }
    }

    /// `<w, x>` summed left to right, as the update rules do.
    fn dot(&self, x: &[f64]) -> f64 {
        fn sum(w: impl Iterator<Item = f64>, x: &[f64]) -> f64 {
            let mut y = 0.0;
            for (wi, xi) in w.zip(x) {
                y += wi * xi;
            }
            y
        }
        match &self.rule {
            LinearRule::Sgd { w, .. } => sum(w.iter().copied(), x),
            LinearRule::Idbd(p) | LinearRule::IdbdWd(p, _) => sum(p.iter().map(|q| q.w), x),
            LinearRule::Fade(p) => sum(p.iter().map(|q| q.w), x),
            LinearRule::FadeIdbd(p) | LinearRule::Coupled(p) => sum(p.iter().map(|q| q.w), x),
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        match &self.rule {
            LinearRule::Sgd { w, .. } => w.clone(),
            LinearRule::Idbd(p) | LinearRule::IdbdWd(p, _) => p.iter().map(|q| q.w).collect(),
            LinearRule::Fade(p) => p.iter().map(|q| q.w).collect(),
            LinearRule::FadeIdbd(p) | LinearRule::Coupled(p) => p.iter().map(|q| q.w).collect(),
        }
    }
}

impl OnlineLearner for LinearLearner {
    fn predict(&mut self, input: &[f64]) -> Result<&[f64], LearnError> {
        let d = self.grad.len();
        if d != input.len() {
            return Err(MetaError::LengthMismatch { params: d, input: input.len() }.into());
        }
        let y = self.dot(input);
        if !y.is_finite() {
            return Err(LearnError::NonFinitePrediction);
        }
        self.out[0] = y;
        Ok(&self.out)
    }

    fn learn(&mut self, sample: &StreamSample) -> Result<(), LearnError> {
        let x = &sample.input;
        let y = sample.scalar_target();
        let h = &self.hyper;
        match &mut self.rule {
            LinearRule::Sgd { w, alpha, lambda } => {
                let mut pred = 0.0;
                for (wi, xi) in w.iter().zip(x) {
                    pred += wi * xi;
                }
                for (g, xi) in self.grad.iter_mut().zip(x) {
                    *g = -((y - pred) * xi);
                }
                sgd_step(w, &self.grad, *alpha, *lambda);
                if let Some(i) = w.iter().position(|v| !v.is_finite()) {
                    return Err(MetaError::NonFiniteState { index: i, field: "w" }.into());
                }
            }
            LinearRule::Idbd(p) => {
                idbd_step(p, x, y, h)?;
            }
            LinearRule::IdbdWd(p, lambda) => {
                idbd_wd_step(p, x, y, h, *lambda)?;
            }
            LinearRule::Fade(p) => {
                fade_step(p, x, y, h)?;
            }
            LinearRule::FadeIdbd(p) => {
                fade_idbd_step(p, x, y, h)?;
            }
            LinearRule::Coupled(p) => {
                coupled_step(p, x, y, h)?;
            }
        }
        Ok(())
    }

    fn decay_rates(&self) -> Option<Vec<f64>> {
        match &self.rule {
            LinearRule::Fade(p) => Some(p.iter().map(|q| q.lambda).collect()),
            LinearRule::FadeIdbd(p) | LinearRule::Coupled(p) => Some(p.iter().map(|q| q.lambda).collect()),
            _ => None,
        }
    }

    fn dump_state(&self) -> serde_json::Value {
        let params = match &self.rule {
            LinearRule::Sgd { w, alpha, lambda } => json!({ "w": w, "alpha": alpha, "lambda": lambda }),
            LinearRule::Idbd(p) => json!(p),
            LinearRule::IdbdWd(p, lambda) => json!({ "params": p, "lambda": lambda }),
            LinearRule::Fade(p) => json!(p),
            LinearRule::FadeIdbd(p) | LinearRule::Coupled(p) => json!(p),
        };
        json!({ "hyper": self.hyper, "params": params })
    }
}

/// Network learner: a body optimizer on the hidden layers and either the same
/// optimizer or FADE on the head.
pub struct NetLearner {
    inner: ComposedLearner,
}

impl NetLearner {
    /// Network for the task: 32-256-20 ReLU for teacher-student, 784-300-150-47
    /// leaky ReLU for EMNIST. Weights are drawn from `rng`.
    pub fn new(spec: &LearnerSpec, task: &TaskSpec, input_dim: usize, output_dim: usize, rng: &mut StreamRng) -> Result<Self, NetError> {
        let (shape, act, loss) = match task {
            TaskSpec::TeacherStudent { config } => (vec![input_dim, config.hidden, output_dim], Activation::Relu, LossKind::SquaredError),
            TaskSpec::Emnist { .. } => (vec![input_dim, 300, 150, output_dim], Activation::LeakyRelu, LossKind::CrossEntropy),
            TaskSpec::LinearTracking { .. } => (vec![input_dim, output_dim], Activation::Identity, LossKind::SquaredError),
        };
        let net = MlpNet::init(&shape, act, rng)?;
        let head_hyper = |alpha, theta_lambda, gamma0, clamp_decay| MetaHyper {
            alpha,
            theta_lambda,
            gamma0,
            clamp_decay,
            ..MetaHyper::default()
        };
        let (body, head) = match *spec {
            LearnerSpec::Sgd { alpha } => (BodyOptimizer::Sgd { alpha, lambda: 0.0 }, HeadRule::Shared),
            // L2 folded into the gradient, as framework SGD does: per-step shrink alpha * lambda
            LearnerSpec::SgdWd { alpha, lambda } => (BodyOptimizer::Sgd { alpha, lambda: alpha * lambda }, HeadRule::Shared),
            LearnerSpec::Adam { alpha, adam } => (BodyOptimizer::adam(&net, alpha, 0.0, adam), HeadRule::Shared),
            LearnerSpec::Adamw { alpha, weight_decay, adam } => {
                (BodyOptimizer::adam(&net, alpha, alpha * weight_decay, adam), HeadRule::Shared)
            }
            LearnerSpec::SgdWclip { alpha, kappa } => (BodyOptimizer::clipped_sgd(&net, alpha, kappa), HeadRule::Shared),
            LearnerSpec::Fade { alpha, theta_lambda, gamma0, clamp_decay } => {
                let head = FadeHead::for_layer(net.head(), gamma0);
                (
                    BodyOptimizer::Sgd { alpha, lambda: 0.0 },
                    HeadRule::Fade { head, hyper: head_hyper(alpha, theta_lambda, gamma0, clamp_decay) },
                )
            }
            LearnerSpec::FadeAdam { alpha, theta_lambda, gamma0, clamp_decay, adam } => {
                let h = net.head();
                let head = FadeHead::with_adam(h.fan_out, h.fan_in, gamma0, adam);
                (
                    BodyOptimizer::adam(&net, alpha, 0.0, adam),
                    HeadRule::Fade { head, hyper: head_hyper(alpha, theta_lambda, gamma0, clamp_decay) },
                )
            }
            ref other => panic!("{} is not a network method", other.method()),
        };
        Ok(Self {
            inner: ComposedLearner::new(net, body, head, loss),
        })
    }

    pub fn inner(&self) -> &ComposedLearner {
        &self.inner
    }
}

impl OnlineLearner for NetLearner {
    fn predict(&mut self, input: &[f64]) -> Result<&[f64], LearnError> {
        Ok(self.inner.predict(input)?)
    }

    fn learn(&mut self, sample: &StreamSample) -> Result<(), LearnError> {
        Ok(self.inner.learn(sample.head_target())?)
    }

    fn decay_rates(&self) -> Option<Vec<f64>> {
        match self.inner.head_rule() {
            HeadRule::Fade { head, .. } => Some((0..head.rows()).flat_map(|k| head.row_lambdas(k)).collect()),
            HeadRule::Shared => None,
        }
    }

    fn dump_state(&self) -> serde_json::Value {
        let head = match self.inner.head_rule() {
            HeadRule::Fade { head, hyper } => json!({ "fade": head, "hyper": hyper }),
            HeadRule::Shared => serde_json::Value::Null,
        };
        json!({ "net": self.inner.net(), "body": self.inner.body(), "head": head })
    }
}
