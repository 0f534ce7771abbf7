//! Backprop and cross-entropy head gradients against central differences.

use rand::Rng;

use crate::meta_optim::{fade_ce_head_step, FadeHead, MetaHyper};
use crate::net::{Activation, Dense, LossKind, MlpNet};
use crate::rng::{stream, StreamId};

/// Denominator floor for relative errors. Central differences with step 1e-6
/// carry roundoff near 1e-10 for O(1) losses, so entries much smaller than
/// this floor are compared in absolute terms.
pub const REL_ERR_FLOOR: f64 = 1e-3;

const FD_STEP: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, REL_ERR_FLOOR)`.
pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_ERR_FLOOR)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub label: String,
    pub params: usize,
    pub max_rel_err: f64,
}

fn loss_of(out: &[f64], loss: LossKind, y: &[f64], label: usize) -> f64 {
    match loss {
        LossKind::SquaredError => 0.5 * out.iter().zip(y).map(|(o, t)| (t - o) * (t - o)).sum::<f64>(),
        LossKind::CrossEntropy => out.iter().map(|z| z.exp()).sum::<f64>().ln() - out[label],
    }
}

/// Random small network (seeded) checked over every parameter.
pub fn mlp_gradient_check(seed: u64) -> GradCheckReport {
    let mut rng = stream(seed, StreamId::Probe);
    let depth = rng.random_range(1..=2);
    let mut shape = vec![rng.random_range(2..=5)];
    shape.extend((0..depth).map(|_| rng.random_range(2..=6)));
    shape.push(rng.random_range(2..=4));
    let act = if rng.random::<bool>() { Activation::Relu } else { Activation::LeakyRelu };
    let loss = if rng.random::<bool>() { LossKind::SquaredError } else { LossKind::CrossEntropy };
    let mut net = MlpNet::init(&shape, act, &mut rng).expect("valid shape");
    let x: Vec<f64> = (0..shape[0]).map(|_| rng.random_range(-1.0..1.0)).collect();
    let n_out = *shape.last().expect("non-empty");
    let y: Vec<f64> = (0..n_out).map(|_| rng.random_range(-1.0..1.0)).collect();
    let label = rng.random_range(0..n_out);

    let out = net.forward(&x).expect("finite").to_vec();
    let loss_grad: Vec<f64> = match loss {
        LossKind::SquaredError => out.iter().zip(&y).map(|(o, t)| o - t).collect(),
        LossKind::CrossEntropy => {
            let z: f64 = out.iter().map(|v| v.exp()).sum();
            out.iter().enumerate().map(|(k, v)| v.exp() / z - f64::from(u8::from(k == label))).collect()
        }
    };
    let mut grads = net.gradients();
    net.backward(&loss_grad, &mut grads, true).expect("cache valid");

    let mut flat = Vec::new();
    let mut analytic = Vec::new();
    for (l, layer) in net.layers().iter().enumerate() {
        flat.extend_from_slice(&layer.weights);
        flat.extend_from_slice(&layer.bias);
        analytic.extend_from_slice(&grads.weights[l]);
        analytic.extend_from_slice(&grads.bias[l]);
    }
    let f = |p: &[f64]| {
        let mut probe = net.clone();
        let mut off = 0;
        for layer in probe.layers_mut() {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&p[off..off + nw]);
            off += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&p[off..off + nb]);
            off += nb;
        }
        let o = probe.forward(&x).expect("finite").to_vec();
        loss_of(&o, loss, &y, label)
    };
    let numeric = super::numerical_gradient(f, &flat, FD_STEP);
    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    GradCheckReport {
        label: format!("mlp {shape:?} {act:?} {loss:?}"),
        params: flat.len(),
        max_rel_err,
    }
}

/// The cross-entropy head residual `1[k=y] - p_k` times `x_j` is the negative
/// loss gradient in `W[k][j]`.
pub fn ce_head_gradient_check(seed: u64) -> GradCheckReport {
    let mut rng = stream(seed, StreamId::Probe);
    let classes = rng.random_range(2..=6);
    let cols = rng.random_range(1..=5);
    let mut layer = Dense::init(cols, classes, Activation::Identity, &mut rng);
    let x: Vec<f64> = (0..cols).map(|_| rng.random_range(-2.0..2.0)).collect();
    let label = rng.random_range(0..classes);

    // alpha = 0 and lambda = exp(-800) = 0 leave the layer unchanged
    let frozen = layer.clone();
    let hyper = MetaHyper {
        gamma0: -800.0,
        ..MetaHyper::default()
    };
    let mut head = FadeHead::for_layer(&layer, hyper.gamma0);
    let out = fade_ce_head_step(&mut layer, &mut head, &x, label, &hyper).expect("valid head");
    assert_eq!(layer, frozen);
    let mut analytic = Vec::with_capacity(classes * cols);
    for k in 0..classes {
        let residual = f64::from(u8::from(k == label)) - out.probs[k];
        analytic.extend(x.iter().map(|xj| -(residual * xj)));
    }
    let f = |w: &[f64]| {
        let logits: Vec<f64> = (0..classes)
            .map(|k| (0..cols).map(|j| w[k * cols + j] * x[j]).sum::<f64>() + frozen.bias[k])
            .collect();
        loss_of(&logits, LossKind::CrossEntropy, &[], label)
    };
    let numeric = super::numerical_gradient(f, &frozen.weights, FD_STEP);
    let max_rel_err = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, n)| relative_error(*a, *n))
        .fold(0.0, f64::max);
    GradCheckReport {
        label: format!("ce head {classes}x{cols}"),
        params: analytic.len(),
        max_rel_err,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0), 0.0);
        assert!((relative_error(2.0, 1.0) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0) - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn random_networks_pass() {
        for seed in 0..10 {
            let r = mlp_gradient_check(seed);
            assert!(r.max_rel_err < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn ce_heads_pass() {
        for seed in 0..10 {
            let r = ce_head_gradient_check(seed);
            assert!(r.max_rel_err < 1e-6, "{r:?}");
        }
    }
}
