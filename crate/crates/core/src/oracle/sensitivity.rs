//! Finite-difference check of the decay sensitivity trace `g = dw/dgamma`.
//!
//! With one weight and `gamma` frozen, the trace recursion is the exact
//! derivative of the weight trajectory as long as the positive bound never
//! clips. The check re-simulates the trajectory at `gamma +- eps` and compares.

use rand::Rng;
use thiserror::Error;

use crate::meta_optim::{fade_step, FadeParam, MetaError, MetaHyper};

pub const EPS_RANGE: (f64, f64) = (1e-7, 1e-4);

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryProbe {
    pub inputs: Vec<f64>,
    pub targets: Vec<f64>,
    pub w0: f64,
    pub gamma: f64,
    pub alpha: f64,
    pub eps: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensitivityReport {
    pub g_exact: f64,
    pub g_trace: f64,
    pub rel_err: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProbeError {
    #[error("perturbation {0} outside [1e-7, 1e-4]")]
    EpsOutOfRange(f64),
    #[error("{inputs} inputs but {targets} targets")]
    LengthMismatch { inputs: usize, targets: usize },
    /// The positive bound clipped, so the trace is not an exact derivative here.
    #[error("trace factor {value} is not positive at step {step}; probe invalid")]
    BoundActive { step: usize, value: f64 },
    #[error(transparent)]
    Meta(#[from] MetaError),
}

impl TrajectoryProbe {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Random probe whose trace factor stays above 0.1: `|x| <= 1`,
    /// `alpha <= 0.5`, `lambda <= exp(-1)`.
    pub fn random<R: Rng + ?Sized>(rng: &mut R, horizon: usize) -> Self {
        let inputs = (0..horizon).map(|_| rng.random_range(-1.0..1.0)).collect();
        let constant = rng.random_range(-2.0..2.0);
        let targets = vec![constant; horizon];
        Self {
            inputs,
            targets,
            w0: rng.random_range(-1.0..1.0),
            gamma: rng.random_range(-4.0..-1.0),
            alpha: rng.random_range(0.01..0.5),
            eps: 1e-5,
        }
    }

    fn simulate(&self, gamma: f64) -> f64 {
        let lambda = gamma.exp();
        let mut w = self.w0;
        for (&x, &y) in self.inputs.iter().zip(&self.targets) {
            let err = y - w * x;
            w = (1.0 - lambda) * w + self.alpha * err * x;
        }
        w
    }
}

/// `(w_T(gamma + eps) - w_T(gamma - eps)) / (2 eps)` against the running trace.
pub fn finite_diff_sensitivity(probe: &TrajectoryProbe) -> Result<SensitivityReport, ProbeError> {
    let (lo, hi) = EPS_RANGE;
    if !(lo..=hi).contains(&probe.eps) {
        return Err(ProbeError::EpsOutOfRange(probe.eps));
    }
    if probe.inputs.len() != probe.targets.len() {
        return Err(ProbeError::LengthMismatch {
            inputs: probe.inputs.len(),
            targets: probe.targets.len(),
        });
    }
    let lambda = probe.gamma.exp();
    for (step, &x) in probe.inputs.iter().enumerate() {
        let value = 1.0 - lambda - probe.alpha * x * x;
        if value <= 0.0 {
            return Err(ProbeError::BoundActive { step, value });
        }
    }
    let hyper = MetaHyper {
        alpha: probe.alpha,
        theta_lambda: 0.0,
        gamma0: probe.gamma,
        ..MetaHyper::default()
    };
    let mut p = [FadeParam::new(probe.w0, probe.gamma)];
    for (&x, &y) in probe.inputs.iter().zip(&probe.targets) {
        fade_step(&mut p, &[x], y, &hyper)?;
    }
    let g_trace = p[0].g;
    let g_exact = (probe.simulate(probe.gamma + probe.eps) - probe.simulate(probe.gamma - probe.eps)) / (2.0 * probe.eps);
    Ok(SensitivityReport {
        g_exact,
        g_trace,
        rel_err: super::relative_error(g_trace, g_exact),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    #[test]
    fn empty_horizon_is_zero() {
        let probe = TrajectoryProbe {
            inputs: vec![],
            targets: vec![],
            w0: 0.7,
            gamma: -2.0,
            alpha: 0.1,
            eps: 1e-5,
        };
        let r = finite_diff_sensitivity(&probe).unwrap();
        assert_eq!(r.g_trace, 0.0);
        assert_eq!(r.g_exact, 0.0);
    }

    #[test]
    fn two_step_hand_trace() {
        let probe = TrajectoryProbe {
            inputs: vec![1.0, 1.0],
            targets: vec![1.0, 1.0],
            w0: 0.0,
            gamma: 0.01f64.ln(),
            alpha: 0.1,
            eps: 1e-5,
        };
        let r = finite_diff_sensitivity(&probe).unwrap();
        assert!((r.g_trace + 0.001).abs() < 1e-15);
        assert!((r.g_exact - r.g_trace).abs() < 1e-9);
    }

    #[test]
    fn random_probes_agree() {
        let mut rng = stream(0, StreamId::Probe);
        for _ in 0..20 {
            let r = finite_diff_sensitivity(&TrajectoryProbe::random(&mut rng, 50)).unwrap();
            assert!(r.rel_err < 1e-6, "{r:?}");
        }
    }

    #[test]
    fn invalid_probes_are_reported() {
        let mut probe = TrajectoryProbe {
            inputs: vec![1.0, 3.0],
            targets: vec![0.0, 0.0],
            w0: 1.0,
            gamma: -2.0,
            alpha: 0.5,
            eps: 1e-5,
        };
        assert!(matches!(finite_diff_sensitivity(&probe), Err(ProbeError::BoundActive { step: 1, .. })));
        probe.eps = 1e-3;
        assert_eq!(finite_diff_sensitivity(&probe), Err(ProbeError::EpsOutOfRange(1e-3)));
    }
}
