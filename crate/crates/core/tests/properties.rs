//! Property tests over the update rules, baselines, streams and metrics.

use fade_core::baselines::{sgd_step, weight_clip, ClipSpec};
use fade_core::harness::compute_metrics;
use fade_core::meta_optim::{
    fade_idbd_step, fade_step, idbd_step, idbd_wd_step, softmax_into, FadeIdbdParam, FadeParam, IdbdParam, MetaHyper,
};
use fade_core::rng::{stream, StreamId};
use fade_core::tasks::{LinearTracking, Task, TeacherStudent, TeacherStudentConfig};
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn random_stream(seed: u64, d: usize, steps: usize) -> Vec<(Vec<f64>, f64)> {
    let mut rng = stream(seed, StreamId::Probe);
    (0..steps)
        .map(|_| {
            let x: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal) * 0.5).collect();
            (x, rng.sample::<f64, _>(StandardNormal))
        })
        .collect()
}

fn dot(w: &[f64], x: &[f64]) -> f64 {
    let mut y = 0.0;
    for (a, b) in w.iter().zip(x) {
        y += a * b;
    }
    y
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn frozen_fade_is_sgd_with_fixed_decay(seed in any::<u64>(), d in 1usize..8, gamma0 in -6.0f64..-0.5, alpha in 0.001f64..0.1) {
        let data = random_stream(seed, d, 300);
        let hyper = MetaHyper { alpha, gamma0, theta_lambda: 0.0, ..MetaHyper::default() };
        let mut p = vec![FadeParam::new(0.0, gamma0); d];
        let mut w = vec![0.0; d];
        let mut grad = vec![0.0; d];
        for (x, y) in &data {
            fade_step(&mut p, x, *y, &hyper).unwrap();
            let delta = y - dot(&w, x);
            for (g, xi) in grad.iter_mut().zip(x) {
                *g = -(delta * xi);
            }
            sgd_step(&mut w, &grad, alpha, gamma0.exp());
            for (a, b) in p.iter().zip(&w) {
                prop_assert_eq!(a.w.to_bits(), b.to_bits());
            }
        }
    }

    #[test]
    fn frozen_fade_idbd_is_idbd_wd(seed in any::<u64>(), d in 1usize..8, gamma0 in -6.0f64..-1.0, beta0 in -6.0f64..-2.0) {
        let data = random_stream(seed, d, 300);
        let hyper = MetaHyper { gamma0, beta0, ..MetaHyper::default() };
        let lambda = gamma0.exp();
        let mut a = vec![FadeIdbdParam::new(0.0, gamma0, beta0); d];
        let mut b = vec![IdbdParam::new(0.0, beta0); d];
        for (x, y) in &data {
            fade_idbd_step(&mut a, x, *y, &hyper).unwrap();
            idbd_wd_step(&mut b, x, *y, &hyper, lambda).unwrap();
            for (p, q) in a.iter().zip(&b) {
                prop_assert_eq!(p.w.to_bits(), q.w.to_bits());
            }
        }
    }

    #[test]
    fn idbd_wd_without_decay_is_idbd(seed in any::<u64>(), d in 1usize..8, theta in 0.0f64..0.05, beta0 in -6.0f64..-2.0) {
        let data = random_stream(seed, d, 300);
        let hyper = MetaHyper { theta_alpha: theta, beta0, ..MetaHyper::default() };
        let mut a = vec![IdbdParam::new(0.0, beta0); d];
        let mut b = a.clone();
        for (x, y) in &data {
            idbd_wd_step(&mut a, x, *y, &hyper, 0.0).unwrap();
            idbd_step(&mut b, x, *y, &hyper).unwrap();
            prop_assert_eq!(&a, &b);
        }
    }

    #[test]
    fn decay_rate_stays_exp_of_log_rate(seed in any::<u64>(), d in 1usize..6, theta in 0.0f64..0.5, gamma0 in -5.0f64..1.0) {
        let data = random_stream(seed, d, 200);
        let hyper = MetaHyper { alpha: 0.05, theta_lambda: theta, gamma0, ..MetaHyper::default() };
        let mut p = vec![FadeParam::new(0.0, gamma0); d];
        for (x, y) in &data {
            if fade_step(&mut p, x, *y, &hyper).is_err() {
                break;
            }
            for q in &p {
                prop_assert_eq!(q.lambda.to_bits(), q.gamma.exp().to_bits());
                prop_assert!(q.lambda > 0.0);
            }
        }
    }

    /// Larger fixed decay gives a smaller fixed point `alpha x y / (lambda + alpha x^2)`.
    #[test]
    fn memory_horizon_is_monotone(x in 0.2f64..2.0, y in 0.5f64..3.0, l1 in 0.001f64..0.3, gap in 0.01f64..0.5) {
        let alpha = 0.1;
        let fixed_point = |lambda: f64| {
            let gamma = lambda.ln();
            let hyper = MetaHyper { alpha, gamma0: gamma, ..MetaHyper::default() };
            let mut p = [FadeParam::new(0.0, gamma)];
            for _ in 0..20_000 {
                fade_step(&mut p, &[x], y, &hyper).unwrap();
            }
            let lambda = p[0].lambda;
            let closed = alpha * x * y / (lambda + alpha * x * x);
            assert!((p[0].w - closed).abs() < 1e-10, "{} vs {closed}", p[0].w);
            p[0].w
        };
        prop_assert!(fixed_point(l1 + gap).abs() < fixed_point(l1).abs());
    }

    #[test]
    fn clip_is_idempotent(w in prop::collection::vec(-5.0f64..5.0, 1..40), kappa in 0.5f64..4.0, bound in 0.01f64..1.0) {
        let spec = ClipSpec::new(kappa, bound);
        let mut once = w.clone();
        weight_clip(&mut once, &spec);
        let mut twice = once.clone();
        weight_clip(&mut twice, &spec);
        prop_assert_eq!(&once, &twice);
        prop_assert!(once.iter().all(|v| v.abs() <= kappa * bound));
    }

    #[test]
    fn sgd_is_linear_in_gradient(w in prop::collection::vec(-2.0f64..2.0, 1..10), c in -3.0f64..3.0, alpha in 0.001f64..0.5, lambda in 0.0f64..0.5, seed in any::<u64>()) {
        let mut rng = stream(seed, StreamId::Probe);
        let g: Vec<f64> = w.iter().map(|_| rng.random_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = g.iter().map(|v| c * v).collect();
        let mut base = w.clone();
        sgd_step(&mut base, &vec![0.0; w.len()], alpha, lambda);
        let mut one = w.clone();
        sgd_step(&mut one, &g, alpha, lambda);
        let mut many = w.clone();
        sgd_step(&mut many, &scaled, alpha, lambda);
        for i in 0..w.len() {
            let expect = base[i] + c * (one[i] - base[i]);
            prop_assert!((many[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_is_a_distribution(z in prop::collection::vec(-700.0f64..700.0, 2..30)) {
        let mut p = vec![0.0; z.len()];
        softmax_into(&z, &mut p);
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn linear_stream_is_reproducible(seed in any::<u64>(), noise in 0.0f64..2.0) {
        let mut a = LinearTracking::new(noise, stream(seed, StreamId::Task));
        let mut b = LinearTracking::new(noise, stream(seed, StreamId::Task));
        for _ in 0..100 {
            prop_assert_eq!(a.next_sample(), b.next_sample());
        }
    }

    #[test]
    fn window_means_average_to_summary(v in prop::collection::vec(0.0f64..10.0, 1..40), window in 1u64..10) {
        let n = v.len() - v.len() % window as usize;
        prop_assume!(n > 0);
        let m = compute_metrics(&v[..n], window, None);
        let re = m.windows.iter().map(|p| p.value).sum::<f64>() / m.windows.len() as f64;
        prop_assert!((re - m.summary.unwrap()).abs() < 1e-9);
    }
}

#[test]
fn teacher_stream_is_reproducible() {
    let config = TeacherStudentConfig { hidden: 16, period: 5, ..TeacherStudentConfig::default() };
    let mut a = TeacherStudent::new(config, stream(11, StreamId::Task));
    let mut b = TeacherStudent::new(config, stream(11, StreamId::Task));
    for _ in 0..400 {
        assert_eq!(a.next_sample(), b.next_sample());
    }
}
