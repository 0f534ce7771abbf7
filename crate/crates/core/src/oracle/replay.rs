//! Second implementations of the linear rules, written directly from the
//! per-weight pseudocode over plain arrays, and a replay check that runs them
//! next to the library rules on a recorded stream.
//!
//! Shared float conventions (needed for bitwise agreement): the prediction is
//! a left-to-right sum, `delta * x_i` is formed once per weight, and `x_i^2`
//! is formed before it is scaled.

use serde::{Deserialize, Serialize};

use crate::meta_optim::{
    coupled_step, fade_idbd_step, fade_step, idbd_step, idbd_wd_step, FadeIdbdParam, FadeParam, IdbdParam, MetaError,
    MetaHyper,
};
use crate::rng::{stream, StreamId};
use crate::tasks::{LinearTracking, StreamSample, Task};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Fade,
    Idbd,
    IdbdWd,
    FadeIdbd,
    Coupled,
}

impl Algorithm {
    pub const ALL: [Algorithm; 5] = [
        Algorithm::Fade,
        Algorithm::Idbd,
        Algorithm::IdbdWd,
        Algorithm::FadeIdbd,
        Algorithm::Coupled,
    ];
}

/// Structure-of-arrays interpreter. Fields an algorithm does not use stay at their initial values.
#[derive(Debug, Clone, PartialEq)]
pub struct Interpreter {
    pub algorithm: Algorithm,
    pub w: Vec<f64>,
    pub gamma: Vec<f64>,
    pub lambda: Vec<f64>,
    pub g: Vec<f64>,
    pub beta: Vec<f64>,
    pub alpha: Vec<f64>,
    pub h: Vec<f64>,
    step_size: f64,
    theta_alpha: f64,
    theta_lambda: f64,
    fixed_decay: f64,
}

fn plus(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl Interpreter {
    pub fn new(algorithm: Algorithm, d: usize, hyper: &MetaHyper, fixed_decay: f64) -> Self {
        Self {
            algorithm,
            w: vec![0.0; d],
            gamma: vec![hyper.gamma0; d],
            lambda: vec![hyper.gamma0.exp(); d],
            g: vec![0.0; d],
            beta: vec![hyper.beta0; d],
            alpha: vec![hyper.beta0.exp(); d],
            h: vec![0.0; d],
            step_size: hyper.alpha,
            theta_alpha: hyper.theta_alpha,
            theta_lambda: hyper.theta_lambda,
            fixed_decay,
        }
    }

    pub fn step(&mut self, x: &[f64], y_star: f64) -> f64 {
        let mut y = 0.0;
        for i in 0..x.len() {
            y += self.w[i] * x[i];
        }
        let delta = y_star - y;
        for i in 0..x.len() {
            let dx = delta * x[i];
            let x2 = x[i] * x[i];
            match self.algorithm {
                Algorithm::Fade => {
                    self.gamma[i] += self.theta_lambda * dx * self.g[i];
                    self.lambda[i] = self.gamma[i].exp();
                    self.g[i] = self.g[i] * plus(1.0 - self.lambda[i] - self.step_size * x2) - self.lambda[i] * self.w[i];
                    self.w[i] = (1.0 - self.lambda[i]) * self.w[i] + self.step_size * dx;
                }
                Algorithm::Idbd => {
                    self.beta[i] += self.theta_alpha * dx * self.h[i];
                    self.alpha[i] = self.beta[i].exp();
                    self.w[i] += self.alpha[i] * dx;
                    self.h[i] = self.h[i] * plus(1.0 - self.alpha[i] * x2) + self.alpha[i] * dx;
                }
                Algorithm::IdbdWd => {
                    let lam = self.fixed_decay;
                    self.beta[i] += self.theta_alpha * dx * self.h[i];
                    self.alpha[i] = self.beta[i].exp();
                    self.w[i] = (1.0 - lam) * self.w[i] + self.alpha[i] * dx;
                    self.h[i] = self.h[i] * plus(1.0 - lam - self.alpha[i] * x2) + self.alpha[i] * dx;
                }
                Algorithm::FadeIdbd => {
                    self.beta[i] += self.theta_alpha * dx * self.h[i];
                    self.alpha[i] = self.beta[i].exp();
                    self.gamma[i] += self.theta_lambda * dx * self.g[i];
                    self.lambda[i] = self.gamma[i].exp();
                    let b = plus(1.0 - self.lambda[i] - self.alpha[i] * x2);
                    self.h[i] = self.h[i] * b + self.alpha[i] * dx;
                    self.g[i] = self.g[i] * b - self.lambda[i] * self.w[i];
                    self.w[i] = (1.0 - self.lambda[i]) * self.w[i] + self.alpha[i] * dx;
                }
                Algorithm::Coupled => {
                    self.beta[i] += self.theta_alpha * dx * self.h[i];
                    self.alpha[i] = self.beta[i].exp();
                    self.gamma[i] += self.theta_lambda * dx * self.g[i];
                    self.lambda[i] = self.gamma[i].exp();
                    let al = self.alpha[i] * self.lambda[i];
                    let b = plus(1.0 - al - self.alpha[i] * x2);
                    self.g[i] = self.g[i] * b - al * self.w[i];
                    self.h[i] = self.h[i] * b + self.alpha[i] * dx - al * self.w[i];
                    self.w[i] = (1.0 - al) * self.w[i] + self.alpha[i] * dx;
                }
            }
        }
        y
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReplaySpec {
    pub algorithm: Algorithm,
    pub hyper: MetaHyper,
    /// Decay for the fixed-decay IDBD variant.
    pub fixed_decay: f64,
    pub noise_std: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub algorithm: Algorithm,
    pub steps: usize,
    /// `(step, bitwise equal)` at each checkpoint.
    pub checkpoints: Vec<(usize, bool)>,
    /// First `(step, field, index)` that differed, if any.
    pub first_mismatch: Option<(usize, &'static str, usize)>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.first_mismatch.is_none() && self.checkpoints.iter().all(|&(_, ok)| ok)
    }
}

enum LibraryState {
    Fade(Vec<FadeParam>),
    Idbd(Vec<IdbdParam>),
    Both(Vec<FadeIdbdParam>),
}

impl LibraryState {
    fn new(spec: &ReplaySpec, d: usize) -> Self {
        let h = &spec.hyper;
        match spec.algorithm {
            Algorithm::Fade => LibraryState::Fade(vec![FadeParam::new(0.0, h.gamma0); d]),
            Algorithm::Idbd | Algorithm::IdbdWd => LibraryState::Idbd(vec![IdbdParam::new(0.0, h.beta0); d]),
            Algorithm::FadeIdbd | Algorithm::Coupled => {
                LibraryState::Both(vec![FadeIdbdParam::new(0.0, h.gamma0, h.beta0); d])
            }
        }
    }

    fn step(&mut self, spec: &ReplaySpec, x: &[f64], y: f64) -> Result<f64, MetaError> {
        let h = &spec.hyper;
        let out = match (self, spec.algorithm) {
            (LibraryState::Fade(p), _) => fade_step(p, x, y, h)?,
            (LibraryState::Idbd(p), Algorithm::IdbdWd) => idbd_wd_step(p, x, y, h, spec.fixed_decay)?,
            (LibraryState::Idbd(p), _) => idbd_step(p, x, y, h)?,
            (LibraryState::Both(p), Algorithm::Coupled) => coupled_step(p, x, y, h)?,
            (LibraryState::Both(p), _) => fade_idbd_step(p, x, y, h)?,
        };
        Ok(out.prediction)
    }

    /// First field that differs from the interpreter, compared bitwise.
    fn mismatch(&self, it: &Interpreter) -> Option<(&'static str, usize)> {
        let same = |a: f64, b: f64| a.to_bits() == b.to_bits();
        let fields: Vec<(&'static str, usize, bool)> = match self {
            LibraryState::Fade(p) => p
                .iter()
                .enumerate()
                .flat_map(|(i, q)| {
                    [
                        ("w", i, same(q.w, it.w[i])),
                        ("gamma", i, same(q.gamma, it.gamma[i])),
                        ("lambda", i, same(q.lambda, it.lambda[i])),
                        ("g", i, same(q.g, it.g[i])),
                    ]
                })
                .collect(),
            LibraryState::Idbd(p) => p
                .iter()
                .enumerate()
                .flat_map(|(i, q)| {
                    [
                        ("w", i, same(q.w, it.w[i])),
                        ("beta", i, same(q.beta, it.beta[i])),
                        ("alpha", i, same(q.alpha, it.alpha[i])),
                        ("h", i, same(q.h, it.h[i])),
                    ]
                })
                .collect(),
            LibraryState::Both(p) => p
                .iter()
                .enumerate()
                .flat_map(|(i, q)| {
                    [
                        ("w", i, same(q.w, it.w[i])),
                        ("gamma", i, same(q.gamma, it.gamma[i])),
                        ("lambda", i, same(q.lambda, it.lambda[i])),
                        ("g", i, same(q.g, it.g[i])),
                        ("beta", i, same(q.beta, it.beta[i])),
                        ("alpha", i, same(q.alpha, it.alpha[i])),
                        ("h", i, same(q.h, it.h[i])),
                    ]
                })
                .collect(),
        };
        fields.into_iter().find(|f| !f.2).map(|(n, i, _)| (n, i))
    }
}

/// Record `steps` samples of linear tracking, run the library rule and the
/// interpreter side by side, and compare full state bitwise at steps 1, 2
/// and `steps`. Every step's prediction is compared as well.
pub fn replay_trace_check(spec: &ReplaySpec, steps: usize) -> Result<ReplayReport, MetaError> {
    let mut task = LinearTracking::new(spec.noise_std, stream(spec.seed, StreamId::Task));
    let recorded: Vec<StreamSample> = (0..steps).map(|_| task.next_sample()).collect();
    let d = task.input_dim();
    let mut lib = LibraryState::new(spec, d);
    let mut it = Interpreter::new(spec.algorithm, d, &spec.hyper, spec.fixed_decay);
    let mut checkpoints = Vec::new();
    let mut first_mismatch = None;
    for (t, s) in recorded.iter().enumerate() {
        let y = s.scalar_target();
        let p_lib = lib.step(spec, &s.input, y)?;
        let p_it = it.step(&s.input, y);
        let step = t + 1;
        if first_mismatch.is_none() && p_lib.to_bits() != p_it.to_bits() {
            first_mismatch = Some((step, "prediction", 0));
        }
        if step == 1 || step == 2 || step == steps {
            let m = lib.mismatch(&it);
            if first_mismatch.is_none() {
                first_mismatch = m.map(|(f, i)| (step, f, i));
            }
            checkpoints.push((step, m.is_none()));
        }
    }
    Ok(ReplayReport {
        algorithm: spec.algorithm,
        steps,
        checkpoints,
        first_mismatch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(algorithm: Algorithm, seed: u64) -> ReplaySpec {
        ReplaySpec {
            algorithm,
            hyper: MetaHyper {
                alpha: 0.05,
                theta_alpha: 0.01,
                theta_lambda: 0.01,
                gamma0: -2.3,
                beta0: -4.6,
                clamp_decay: false,
            },
            fixed_decay: 0.01,
            noise_std: 1.0,
            seed,
        }
    }

    #[test]
    fn every_algorithm_replays_bitwise() {
        for alg in Algorithm::ALL {
            let r = replay_trace_check(&spec(alg, 3), 1000).unwrap();
            assert!(r.passed(), "{r:?}");
            assert_eq!(r.checkpoints.iter().map(|c| c.0).collect::<Vec<_>>(), vec![1, 2, 1000]);
        }
    }

    #[test]
    fn interpreter_reductions() {
        // theta_lambda = 0 FADE+IDBD is IDBD with fixed decay exp(gamma0)
        let mut s = spec(Algorithm::FadeIdbd, 0);
        s.hyper.theta_lambda = 0.0;
        let mut a = Interpreter::new(Algorithm::FadeIdbd, 20, &s.hyper, 0.0);
        let mut b = Interpreter::new(Algorithm::IdbdWd, 20, &s.hyper, s.hyper.gamma0.exp());
        let mut task = LinearTracking::new(0.5, stream(1, StreamId::Task));
        for _ in 0..2000 {
            let smp = task.next_sample();
            a.step(&smp.input, smp.scalar_target());
            b.step(&smp.input, smp.scalar_target());
        }
        assert_eq!(a.w, b.w);
        assert_eq!(a.h, b.h);
    }

    #[test]
    fn detects_a_divergence() {
        let s = spec(Algorithm::Fade, 4);
        let mut it = Interpreter::new(Algorithm::Fade, 20, &s.hyper, 0.0);
        let mut lib = LibraryState::new(&s, 20);
        let mut task = LinearTracking::new(1.0, stream(4, StreamId::Task));
        let smp = task.next_sample();
        it.step(&smp.input, smp.scalar_target());
        lib.step(&s, &smp.input, smp.scalar_target()).unwrap();
        it.g[7] = f64::from_bits(it.g[7].to_bits() ^ 1);
        assert_eq!(lib.mismatch(&it), Some(("g", 7)));
    }
}
