//! Linear tracking: 20 Gaussian inputs, 5 relevant unit weights, one sign flip every 20 steps.

use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;

use super::{regression_buf, StreamSample, Task};
use crate::rng::StreamRng;

pub const LINEAR_DIM: usize = 20;
pub const LINEAR_RELEVANT: usize = 5;
pub const FLIP_PERIOD: u64 = 20;

#[derive(Debug, Clone)]
pub struct LinearTracking {
    w_star: [f64; LINEAR_DIM],
    relevant: [usize; LINEAR_RELEVANT],
    noise_std: f64,
    t: u64,
    rng: StreamRng,
}

impl LinearTracking {
    /// Relevant indices and their signs are drawn from `rng`, which the task then keeps.
    pub fn new(noise_std: f64, mut rng: StreamRng) -> Self {
        assert!(noise_std >= 0.0 && noise_std.is_finite(), "noise std must be finite and non-negative");
        let mut relevant = [0; LINEAR_RELEVANT];
        for (slot, i) in relevant.iter_mut().zip(sample(&mut rng, LINEAR_DIM, LINEAR_RELEVANT)) {
            *slot = i;
        }
        relevant.sort_unstable();
        let mut w_star = [0.0; LINEAR_DIM];
        for &i in &relevant {
            w_star[i] = if rng.random::<bool>() { 1.0 } else { -1.0 };
        }
        Self {
            w_star,
            relevant,
            noise_std,
            t: 0,
            rng,
        }
    }

    pub fn w_star(&self) -> &[f64; LINEAR_DIM] {
        &self.w_star
    }

    pub fn relevant(&self) -> &[usize; LINEAR_RELEVANT] {
        &self.relevant
    }

    pub fn is_relevant(&self, i: usize) -> bool {
        self.relevant.contains(&i)
    }

    pub fn noise_std(&self) -> f64 {
        self.noise_std
    }
}

impl Task for LinearTracking {
    fn input_dim(&self) -> usize {
        LINEAR_DIM
    }

    fn output_dim(&self) -> usize {
        1
    }

    fn step(&self) -> u64 {
        self.t
    }

    fn next_into(&mut self, out: &mut StreamSample) {
        if self.t > 0 && self.t % FLIP_PERIOD == 0 {
            let k = self.relevant[self.rng.random_range(0..LINEAR_RELEVANT)];
            self.w_star[k] = -self.w_star[k];
        }
        out.input.resize(LINEAR_DIM, 0.0);
        for v in out.input.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        let mut y = 0.0;
        for (w, x) in self.w_star.iter().zip(&out.input) {
            y += w * x;
        }
        let eps: f64 = self.rng.sample(StandardNormal);
        regression_buf(&mut out.target, 1)[0] = y + self.noise_std * eps;
        self.t += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    fn task(noise: f64, seed: u64) -> LinearTracking {
        LinearTracking::new(noise, stream(seed, StreamId::Task))
    }

    #[test]
    fn exactly_five_unit_weights() {
        for seed in 0..20 {
            let t = task(0.0, seed);
            let nz: Vec<usize> = (0..LINEAR_DIM).filter(|&i| t.w_star()[i] != 0.0).collect();
            assert_eq!(nz, t.relevant().to_vec());
            assert!(nz.iter().all(|&i| t.w_star()[i].abs() == 1.0));
        }
    }

    #[test]
    fn noiseless_target_is_exact() {
        let mut t = task(0.0, 1);
        for _ in 0..50 {
            let s = t.next_sample();
            // any flip happens before sampling, so the post-step weights produced this target
            let y: f64 = t.w_star().iter().zip(&s.input).fold(0.0, |acc, (a, b)| acc + a * b);
            assert_eq!(s.scalar_target(), y);
        }
    }

    #[test]
    fn flips_only_at_multiples_of_twenty() {
        let mut t = task(1.0, 2);
        let mut prev = *t.w_star();
        for step in 0..2000u64 {
            t.next_sample();
            let cur = *t.w_star();
            let changed: Vec<usize> = (0..LINEAR_DIM).filter(|&i| cur[i] != prev[i]).collect();
            if step > 0 && step % FLIP_PERIOD == 0 {
                assert_eq!(changed.len(), 1, "step {step}");
                assert!(t.is_relevant(changed[0]));
                assert_eq!(cur[changed[0]], -prev[changed[0]]);
            } else {
                assert!(changed.is_empty(), "step {step}");
            }
            prev = cur;
        }
    }

    #[test]
    fn second_moment_of_target() {
        // E[y^2] = |w*|^2 + sigma^2 = 5 + sigma^2, Var[y^2] = 2 (5 + sigma^2)^2 for Gaussian y
        for sigma in [0.0, 1.0] {
            let mut t = task(sigma, 3);
            let n = 100_000;
            let mean = (0..n).map(|_| t.next_sample().scalar_target().powi(2)).sum::<f64>() / n as f64;
            let expected = 5.0 + sigma * sigma;
            let sd = (2.0f64).sqrt() * expected / (n as f64).sqrt();
            assert!((mean - expected).abs() < 3.0 * sd, "sigma {sigma}: {mean}");
        }
    }

    #[test]
    fn streams_are_reproducible() {
        let a: Vec<StreamSample> = {
            let mut t = task(1.0, 4);
            (0..100).map(|_| t.next_sample()).collect()
        };
        let mut t = task(1.0, 4);
        for s in &a {
            assert_eq!(&t.next_sample(), s);
        }
    }
}
