//! Fully-connected network with explicit forward and backward passes.
//!
//! The head (last layer) is always linear. Its input, the final hidden
//! activation, is what a FADE head rule sees as `x`.

mod composed;

pub use composed::{score, BodyOptimizer, ComposedLearner, HeadRule, LossKind, StepMetrics};

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::meta_optim::MetaError;

/// Negative-side slope of the leaky ReLU.
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("input has {got} entries, network expects {expected}")]
    InputShape { expected: usize, got: usize },
    #[error("target has {got} entries, network outputs {expected}")]
    TargetShape { expected: usize, got: usize },
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("target kind does not match the loss")]
    TargetKind,
    #[error("backward pass without a forward pass on the current input")]
    StaleCache,
    #[error("non-finite network output")]
    NonFiniteOutput,
    #[error("shape must list at least an input and an output size")]
    BadShape,
    #[error(transparent)]
    Meta(#[from] MetaError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    LeakyRelu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, v: f64) -> f64 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::LeakyRelu => {
                if v > 0.0 {
                    v
                } else {
                    LEAKY_SLOPE * v
                }
            }
            Activation::Identity => v,
        }
    }

    #[inline]
    pub fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if pre > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// Dense layer `y = act(W x + b)`, `W` row-major `fan_out x fan_in`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub fan_in: usize,
    pub fan_out: usize,
    pub activation: Activation,
    /// Uniform-init bound `1/sqrt(fan_in)`; also the weight-clipping scale.
    pub init_bound: f64,
}

impl Dense {
    pub fn init<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.random_range(-bound..bound)).collect() };
        let weights = draw(fan_in * fan_out);
        let bias = draw(fan_out);
        Self {
            weights,
            bias,
            fan_in,
            fan_out,
            activation,
            init_bound: bound,
        }
    }

    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Self {
            weights: vec![0.0; fan_in * fan_out],
            bias: vec![0.0; fan_out],
            fan_in,
            fan_out,
            activation,
            init_bound: 1.0 / (fan_in as f64).sqrt(),
        }
    }

    /// `out = W x + b` (pre-activation). Each row is summed left to right, then the bias is added.
    pub fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.fan_in);
        debug_assert_eq!(out.len(), self.fan_out);
        for (o, (row, &b)) in out.iter_mut().zip(self.weights.chunks_exact(self.fan_in).zip(&self.bias)) {
            let mut s = 0.0;
            for (w, xi) in row.iter().zip(x) {
                s += w * xi;
            }
            *o = s + b;
        }
    }
}

/// Per-layer parameter gradients, overwritten by each backward pass.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
    // dL/d(pre-activation) per layer
    delta: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default)]
struct ForwardCache {
    input: Vec<f64>,
    pre: Vec<Vec<f64>>,
    post: Vec<Vec<f64>>,
    valid: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MlpNet {
    layers: Vec<Dense>,
    #[serde(skip)]
    cache: ForwardCache,
}

impl MlpNet {
    /// `shape = [input, hidden..., output]`; hidden layers use `hidden`, the head is linear.
    /// Weights and biases are drawn from `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init<R: Rng + ?Sized>(shape: &[usize], hidden: Activation, rng: &mut R) -> Result<Self, NetError> {
        if shape.len() < 2 || shape.contains(&0) {
            return Err(NetError::BadShape);
        }
        let n = shape.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { Activation::Identity } else { hidden };
                Dense::init(shape[i], shape[i + 1], act, rng)
            })
            .collect();
        Ok(Self::from_layers(layers))
    }

    pub fn from_layers(layers: Vec<Dense>) -> Self {
        assert!(!layers.is_empty(), "network needs at least one layer");
        for pair in layers.windows(2) {
            assert_eq!(pair[0].fan_out, pair[1].fan_in, "layer shapes do not chain");
        }
        assert_eq!(
            layers.last().map(|l| l.activation),
            Some(Activation::Identity),
            "head must be linear"
        );
        Self {
            layers,
            cache: ForwardCache::default(),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].fan_in
    }

    pub fn output_dim(&self) -> usize {
        self.head().fan_out
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    /// Mutable layers; invalidates the forward cache.
    pub fn layers_mut(&mut self) -> &mut [Dense] {
        self.cache.valid = false;
        &mut self.layers
    }

    pub fn head(&self) -> &Dense {
        self.layers.last().expect("non-empty")
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn gradients(&self) -> Gradients {
        Gradients {
            weights: self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: self.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
            delta: self.layers.iter().map(|l| vec![0.0; l.fan_out]).collect(),
        }
    }

    /// Forward pass; caches intermediates for [`MlpNet::backward`] and returns the head output.
    pub fn forward(&mut self, input: &[f64]) -> Result<&[f64], NetError> {
        if input.len() != self.input_dim() {
            return Err(NetError::InputShape {
                expected: self.input_dim(),
                got: input.len(),
            });
        }
        let cache = &mut self.cache;
        if cache.pre.len() != self.layers.len() {
            cache.pre = self.layers.iter().map(|l| vec![0.0; l.fan_out]).collect();
            cache.post = cache.pre.clone();
        }
        cache.input.clear();
        cache.input.extend_from_slice(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let (done, rest) = cache.post.split_at_mut(l);
            let x = if l == 0 { &cache.input[..] } else { &done[l - 1][..] };
            layer.affine_into(x, &mut cache.pre[l]);
            for (a, &z) in rest[0].iter_mut().zip(&cache.pre[l]) {
                *a = layer.activation.apply(z);
            }
        }
        cache.valid = true;
        let out = &cache.post[self.layers.len() - 1];
        if out.iter().any(|v| !v.is_finite()) {
            return Err(NetError::NonFiniteOutput);
        }
        Ok(out)
    }

    /// Output of the most recent forward pass.
    pub fn output(&self) -> Option<&[f64]> {
        self.cache.valid.then(|| &self.cache.post[self.layers.len() - 1][..])
    }

    /// Input most recently passed to [`MlpNet::forward`].
    pub fn cached_input(&self) -> Option<&[f64]> {
        self.cache.valid.then_some(&self.cache.input[..])
    }

    /// Input seen by the head on the most recent forward pass.
    pub fn head_features(&self) -> Option<&[f64]> {
        if !self.cache.valid {
            return None;
        }
        let n = self.layers.len();
        Some(if n == 1 { &self.cache.input } else { &self.cache.post[n - 2] })
    }

    /// Head layer together with the features it consumed on the last forward pass.
    pub(crate) fn head_and_features_mut(&mut self) -> Option<(&mut Dense, &[f64])> {
        if !self.cache.valid {
            return None;
        }
        let n = self.layers.len();
        let features = if n == 1 { &self.cache.input[..] } else { &self.cache.post[n - 2][..] };
        Some((self.layers.last_mut().expect("non-empty"), features))
    }

    /// Backpropagate `loss_grad = dL/d(output)` through the cached forward pass.
    ///
    /// With `include_head = false` the head's own parameter gradients are left
    /// untouched, but the signal still flows through the current head weights
    /// into the hidden layers.
    pub fn backward(&self, loss_grad: &[f64], grads: &mut Gradients, include_head: bool) -> Result<(), NetError> {
        if !self.cache.valid {
            return Err(NetError::StaleCache);
        }
        let n = self.layers.len();
        if loss_grad.len() != self.output_dim() {
            return Err(NetError::TargetShape {
                expected: self.output_dim(),
                got: loss_grad.len(),
            });
        }
        grads.delta[n - 1].copy_from_slice(loss_grad);
        for l in (0..n).rev() {
            let layer = &self.layers[l];
            let a_prev = if l == 0 { &self.cache.input[..] } else { &self.cache.post[l - 1][..] };
            if l + 1 < n || include_head {
                let delta = &grads.delta[l];
                for (row, &d) in grads.weights[l].chunks_exact_mut(layer.fan_in).zip(delta) {
                    for (gw, &a) in row.iter_mut().zip(a_prev) {
                        *gw = d * a;
                    }
                }
                grads.bias[l].copy_from_slice(delta);
            }
            if l > 0 {
                let (lower, upper) = grads.delta.split_at_mut(l);
                let below = &mut lower[l - 1];
                below.iter_mut().for_each(|v| *v = 0.0);
                for (row, &d) in layer.weights.chunks_exact(layer.fan_in).zip(&upper[0]) {
                    if d == 0.0 {
                        continue;
                    }
                    for (b, &w) in below.iter_mut().zip(row) {
                        *b += w * d;
                    }
                }
                let act = self.layers[l - 1].activation;
                for (b, &z) in below.iter_mut().zip(&self.cache.pre[l - 1]) {
                    *b *= act.derivative(z);
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::numerical_gradient;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn init_is_deterministic_and_bounded() {
        let a = MlpNet::init(&[7, 5, 3], Activation::Relu, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        let b = MlpNet::init(&[7, 5, 3], Activation::Relu, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        assert_eq!(a.layers(), b.layers());
        for l in a.layers() {
            let bound = 1.0 / (l.fan_in as f64).sqrt();
            assert!(l.weights.iter().chain(&l.bias).all(|w| w.abs() <= bound));
        }
        assert_eq!(a.layers()[1].activation, Activation::Identity);
    }

    #[test]
    fn init_weights_are_centered() {
        // U(-b, b) has sd b/sqrt(3); the mean of n draws has sd b/sqrt(3n)
        let net = MlpNet::init(&[100, 100], Activation::Relu, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        let w = &net.layers()[0].weights;
        let n = w.len() as f64;
        let mean = w.iter().sum::<f64>() / n;
        let sd_of_mean = 0.1 / (3.0 * n).sqrt();
        assert_eq!(w.len(), 10_000);
        assert!(mean.abs() < 3.0 * sd_of_mean, "mean {mean}");
    }

    #[test]
    fn rejects_bad_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(MlpNet::init(&[3], Activation::Relu, &mut rng).unwrap_err(), NetError::BadShape);
        let mut net = MlpNet::init(&[3, 2], Activation::Relu, &mut rng).unwrap();
        assert_eq!(
            net.forward(&[1.0, 2.0]).unwrap_err(),
            NetError::InputShape { expected: 3, got: 2 }
        );
    }

    #[test]
    fn zero_weights_output_head_bias() {
        let mut hidden = Dense::zeros(4, 3, Activation::Relu);
        hidden.bias = vec![0.0; 3];
        let mut head = Dense::zeros(3, 2, Activation::Identity);
        head.bias = vec![0.25, -1.5];
        let mut net = MlpNet::from_layers(vec![hidden, head]);
        assert_eq!(net.forward(&[1.0, -2.0, 3.0, 0.5]).unwrap(), &[0.25, -1.5]);
    }

    #[test]
    fn single_layer_is_affine() {
        let mut layer = Dense::zeros(3, 2, Activation::Identity);
        layer.weights = vec![1.0, 2.0, 3.0, -1.0, 0.5, 0.0];
        layer.bias = vec![0.1, 0.2];
        let mut net = MlpNet::from_layers(vec![layer]);
        let out = net.forward(&[1.0, 1.0, 2.0]).unwrap().to_vec();
        assert_eq!(out, vec![(1.0 + 2.0 + 6.0) + 0.1, (-1.0 + 0.5 + 0.0) + 0.2]);
        assert_eq!(net.head_features().unwrap(), &[1.0, 1.0, 2.0]);
    }

    #[test]
    fn negative_preactivations() {
        let mut hidden = Dense::zeros(2, 2, Activation::Relu);
        hidden.weights = vec![-1.0, 0.0, 0.0, -2.0];
        let head = Dense::zeros(2, 1, Activation::Identity);
        let mut relu = MlpNet::from_layers(vec![hidden.clone(), head.clone()]);
        relu.forward(&[1.0, 1.5]).unwrap();
        assert_eq!(relu.head_features().unwrap(), &[0.0, 0.0]);

        hidden.activation = Activation::LeakyRelu;
        let mut leaky = MlpNet::from_layers(vec![hidden, head]);
        leaky.forward(&[1.0, 1.5]).unwrap();
        assert_eq!(leaky.head_features().unwrap(), &[0.01 * -1.0, 0.01 * -3.0]);
    }

    #[test]
    fn backward_needs_forward() {
        let net = MlpNet::init(&[2, 2], Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let mut g = net.gradients();
        assert_eq!(net.backward(&[1.0, 1.0], &mut g, true).unwrap_err(), NetError::StaleCache);
    }

    #[test]
    fn zero_loss_gradient_gives_zero_gradients() {
        let mut net = MlpNet::init(&[4, 6, 3], Activation::LeakyRelu, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
        net.forward(&[0.3, -0.2, 1.0, 0.7]).unwrap();
        let mut g = net.gradients();
        g.weights.iter_mut().flatten().for_each(|v| *v = 9.0);
        net.backward(&[0.0; 3], &mut g, true).unwrap();
        assert!(g.weights.iter().chain(&g.bias).flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn single_identity_layer_gradient_is_outer_product() {
        let mut net = MlpNet::init(&[3, 2], Activation::Relu, &mut ChaCha8Rng::seed_from_u64(6)).unwrap();
        let x = [0.5, -1.0, 2.0];
        net.forward(&x).unwrap();
        let lg = [0.3, -0.7];
        let mut g = net.gradients();
        net.backward(&lg, &mut g, true).unwrap();
        for k in 0..2 {
            for j in 0..3 {
                assert_eq!(g.weights[0][k * 3 + j], lg[k] * x[j]);
            }
        }
        assert_eq!(g.bias[0], lg.to_vec());
    }

    #[test]
    fn head_excluded_but_signal_flows_through_it() {
        let mut net = MlpNet::init(&[3, 4, 2], Activation::LeakyRelu, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        net.forward(&[1.0, 0.5, -0.5]).unwrap();
        let mut full = net.gradients();
        let mut partial = net.gradients();
        net.backward(&[0.4, -0.1], &mut full, true).unwrap();
        net.backward(&[0.4, -0.1], &mut partial, false).unwrap();
        assert_eq!(full.weights[0], partial.weights[0]);
        assert!(partial.weights[1].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_matches_finite_differences() {
        for (seed, act) in [(10u64, Activation::Relu), (11, Activation::LeakyRelu)] {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut net = MlpNet::init(&[4, 5, 3], act, &mut rng).unwrap();
            let x: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = net.forward(&x).unwrap().to_vec();
            let lg: Vec<f64> = out.iter().zip(&y).map(|(o, t)| o - t).collect();
            let mut g = net.gradients();
            net.backward(&lg, &mut g, true).unwrap();

            let w0 = net.layers()[0].weights.clone();
            let loss = |w: &[f64]| {
                let mut probe = net.clone();
                probe.layers_mut()[0].weights.copy_from_slice(w);
                let o = probe.forward(&x).unwrap();
                0.5 * o.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            };
            let numeric = numerical_gradient(loss, &w0, 1e-6);
            for (a, n) in g.weights[0].iter().zip(&numeric) {
                assert!((a - n).abs() < 1e-8, "{a} vs {n}");
            }
        }
    }
}
