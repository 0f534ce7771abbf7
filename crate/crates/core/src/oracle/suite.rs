//! The full oracle battery, as run by `fade check-oracles` and the acceptance tests.

use serde::Serialize;

use super::gradcheck::{ce_head_gradient_check, mlp_gradient_check};
use super::replay::{replay_trace_check, Algorithm, ReplaySpec};
use super::sensitivity::{finite_diff_sensitivity, TrajectoryProbe};
use crate::baselines::sgd_step;
use crate::meta_optim::{fade_idbd_step, fade_step, idbd_step, idbd_wd_step, FadeIdbdParam, FadeParam, IdbdParam, MetaHyper};
use crate::rng::{stream, StreamId};
use crate::tasks::{LinearTracking, Task};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl OracleCheck {
    fn new(name: impl Into<String>, passed: bool, detail: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            passed,
            detail: detail.into(),
        }
    }
}

/// `probes` random trajectories (horizon 1..=200), each requiring `rel_err < 1e-6`.
pub fn sensitivity_check(probes: usize, seed: u64) -> OracleCheck {
    let mut rng = stream(seed, StreamId::Probe);
    let mut worst: f64 = 0.0;
    let mut invalid = 0;
    for _ in 0..probes {
        let horizon = rand::Rng::random_range(&mut rng, 1..=200);
        match finite_diff_sensitivity(&TrajectoryProbe::random(&mut rng, horizon)) {
            Ok(r) => worst = worst.max(r.rel_err),
            Err(_) => invalid += 1,
        }
    }
    OracleCheck::new(
        "sensitivity trace vs finite differences",
        invalid == 0 && worst < 1e-6,
        format!("{probes} probes, max rel err {worst:.3e}, {invalid} invalid"),
    )
}

/// Library rules against the interpreters, bitwise at steps 1, 2 and `steps`.
pub fn replay_checks(steps: usize) -> Vec<OracleCheck> {
    let hyper = MetaHyper {
        alpha: 0.05,
        theta_alpha: 0.01,
        theta_lambda: 0.01,
        gamma0: -2.3,
        beta0: -4.6,
        clamp_decay: false,
    };
    Algorithm::ALL
        .iter()
        .map(|&algorithm| {
            let spec = ReplaySpec {
                algorithm,
                hyper,
                fixed_decay: 0.01,
                noise_std: 1.0,
                seed: 17,
            };
            match replay_trace_check(&spec, steps) {
                Ok(r) => OracleCheck::new(
                    format!("replay {algorithm:?}"),
                    r.passed(),
                    match r.first_mismatch {
                        None => format!("{steps} steps bitwise equal"),
                        Some((s, f, i)) => format!("first mismatch at step {s}: {f}[{i}]"),
                    },
                ),
                Err(e) => OracleCheck::new(format!("replay {algorithm:?}"), false, e.to_string()),
            }
        })
        .collect()
}

fn bits_equal(a: &[f64], b: &[f64]) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Frozen meta-parameters and zero decay reduce the adaptive rules to plainer
/// ones exactly, over `steps` steps of a noisy linear-tracking stream.
pub fn reduction_checks(steps: usize) -> Vec<OracleCheck> {
    let gamma0 = -2.3f64;
    let beta0 = -3.0f64;
    let alpha = 0.05;
    let frozen = MetaHyper {
        alpha,
        theta_alpha: 0.0,
        theta_lambda: 0.0,
        gamma0,
        beta0,
        clamp_decay: false,
    };
    let adaptive_step = MetaHyper {
        theta_alpha: 0.01,
        ..frozen
    };
    let mut task = LinearTracking::new(1.0, stream(23, StreamId::Task));
    let d = task.input_dim();

    let mut fade = vec![FadeParam::new(0.0, gamma0); d];
    let mut sgd_wd = vec![0.0; d];
    let mut fade_idbd_frozen_decay = vec![FadeIdbdParam::new(0.0, gamma0, beta0); d];
    let mut idbd_wd = vec![IdbdParam::new(0.0, beta0); d];
    let mut idbd_wd_zero = vec![IdbdParam::new(0.0, beta0); d];
    let mut idbd = vec![IdbdParam::new(0.0, beta0); d];
    let mut idbd_frozen = vec![IdbdParam::new(0.0, beta0); d];
    let mut sgd = vec![0.0; d];
    let mut grad = vec![0.0; d];
    let mut grad2 = vec![0.0; d];
    let mut failures = [None::<usize>; 4];
    for t in 0..steps {
        let s = task.next_sample();
        let (x, y) = (&s.input, s.scalar_target());
        let bad = |cond: bool, slot: &mut Option<usize>| {
            if !cond && slot.is_none() {
                *slot = Some(t + 1);
            }
        };
        let ok = fade_step(&mut fade, x, y, &frozen).is_ok()
            && fade_idbd_step(&mut fade_idbd_frozen_decay, x, y, &adaptive_step).is_ok()
            && idbd_wd_step(&mut idbd_wd, x, y, &adaptive_step, gamma0.exp()).is_ok()
            && idbd_wd_step(&mut idbd_wd_zero, x, y, &adaptive_step, 0.0).is_ok()
            && idbd_step(&mut idbd, x, y, &adaptive_step).is_ok()
            && idbd_step(&mut idbd_frozen, x, y, &frozen).is_ok();
        if !ok {
            failures.iter_mut().for_each(|f| *f = f.or(Some(t + 1)));
            break;
        }
        let pred: f64 = sgd_wd.iter().zip(x).fold(0.0, |a, (w, xi)| a + w * xi);
        for (g, xi) in grad.iter_mut().zip(x) {
            *g = -((y - pred) * xi);
        }
        sgd_step(&mut sgd_wd, &grad, alpha, gamma0.exp());
        let pred: f64 = sgd.iter().zip(x).fold(0.0, |a, (w, xi)| a + w * xi);
        for (g, xi) in grad2.iter_mut().zip(x) {
            *g = -((y - pred) * xi);
        }
        sgd_step(&mut sgd, &grad2, beta0.exp(), 0.0);

        let w = |p: &[FadeParam]| p.iter().map(|q| q.w).collect::<Vec<_>>();
        let wi = |p: &[IdbdParam]| p.iter().map(|q| q.w).collect::<Vec<_>>();
        let wb = |p: &[FadeIdbdParam]| p.iter().map(|q| q.w).collect::<Vec<_>>();
        let hb = |p: &[FadeIdbdParam]| p.iter().map(|q| q.h).collect::<Vec<_>>();
        let hi = |p: &[IdbdParam]| p.iter().map(|q| q.h).collect::<Vec<_>>();
        bad(bits_equal(&w(&fade), &sgd_wd), &mut failures[0]);
        bad(
            bits_equal(&wb(&fade_idbd_frozen_decay), &wi(&idbd_wd)) && bits_equal(&hb(&fade_idbd_frozen_decay), &hi(&idbd_wd)),
            &mut failures[1],
        );
        bad(
            bits_equal(&wi(&idbd_wd_zero), &wi(&idbd)) && bits_equal(&hi(&idbd_wd_zero), &hi(&idbd)),
            &mut failures[2],
        );
        bad(bits_equal(&wi(&idbd_frozen), &sgd), &mut failures[3]);
    }
    let names = [
        "FADE with frozen decay == SGD with fixed decay",
        "FADE+IDBD with frozen decay == IDBD with fixed decay",
        "IDBD with zero decay == IDBD",
        "IDBD with frozen step size == SGD",
    ];
    names
        .iter()
        .zip(failures)
        .map(|(name, fail)| match fail {
            None => OracleCheck::new(*name, true, format!("{steps} steps bitwise equal")),
            Some(t) => OracleCheck::new(*name, false, format!("diverged at step {t}")),
        })
        .collect()
}

/// `n` random MLP configurations and `n` cross-entropy heads, each requiring max rel err < 1e-6.
pub fn gradient_checks(n: u64) -> Vec<OracleCheck> {
    let mut out = Vec::new();
    for seed in 0..n {
        for r in [mlp_gradient_check(seed), ce_head_gradient_check(seed)] {
            out.push(OracleCheck::new(
                format!("gradient {}", r.label),
                r.max_rel_err < 1e-6,
                format!("{} params, max rel err {:.3e}", r.params, r.max_rel_err),
            ));
        }
    }
    out
}

pub fn run_oracle_suite() -> Vec<OracleCheck> {
    let mut checks = vec![sensitivity_check(100, 0)];
    checks.extend(replay_checks(1000));
    checks.extend(reduction_checks(10_000));
    checks.extend(gradient_checks(10));
    checks
}
