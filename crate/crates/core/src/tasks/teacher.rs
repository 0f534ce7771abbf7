//! Teacher-student regression with three rates of non-stationarity.
//!
//! A fixed random ReLU teacher maps `x ~ N(0, I)` to 20 outputs. The head rows
//! of the fast group have every weight multiplied by an independent random sign
//! every `period` steps, the slow group every `slow_factor * period` steps; the
//! stable group and the hidden layer never change. Biases are not perturbed.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{regression_buf, StreamSample, Task};
use crate::net::{Activation, MlpNet};
use crate::rng::StreamRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputGroup {
    Stable,
    Fast,
    Slow,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TeacherStudentConfig {
    pub input_dim: usize,
    pub hidden: usize,
    pub stable: usize,
    pub fast: usize,
    pub slow: usize,
    /// Fast perturbation period `P`.
    pub period: u64,
    /// Slow period as a multiple of `P`.
    pub slow_factor: u64,
}

impl Default for TeacherStudentConfig {
    fn default() -> Self {
        Self {
            input_dim: 32,
            hidden: 256,
            stable: 6,
            fast: 7,
            slow: 7,
            period: 500,
            slow_factor: 15,
        }
    }
}

impl TeacherStudentConfig {
    pub fn outputs(&self) -> usize {
        self.stable + self.fast + self.slow
    }

    /// Group of output `k`: stable first, then fast, then slow.
    pub fn group_of(&self, k: usize) -> OutputGroup {
        if k < self.stable {
            OutputGroup::Stable
        } else if k < self.stable + self.fast {
            OutputGroup::Fast
        } else {
            OutputGroup::Slow
        }
    }

    pub fn group_range(&self, group: OutputGroup) -> std::ops::Range<usize> {
        match group {
            OutputGroup::Stable => 0..self.stable,
            OutputGroup::Fast => self.stable..self.stable + self.fast,
            OutputGroup::Slow => self.stable + self.fast..self.outputs(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TeacherStudent {
    config: TeacherStudentConfig,
    teacher: MlpNet,
    t: u64,
    rng: StreamRng,
}

impl TeacherStudent {
    pub fn new(config: TeacherStudentConfig, mut rng: StreamRng) -> Self {
        assert!(config.period > 0 && config.slow_factor > 0, "perturbation periods must be positive");
        let teacher = MlpNet::init(&[config.input_dim, config.hidden, config.outputs()], Activation::Relu, &mut rng)
            .expect("teacher shape is valid");
        Self {
            config,
            teacher,
            t: 0,
            rng,
        }
    }

    pub fn config(&self) -> &TeacherStudentConfig {
        &self.config
    }

    pub fn teacher(&self) -> &MlpNet {
        &self.teacher
    }

    fn perturb(&mut self, group: OutputGroup) {
        let cols = self.config.hidden;
        let range = self.config.group_range(group);
        let head = self.teacher.layers_mut().last_mut().expect("teacher has a head");
        for w in &mut head.weights[range.start * cols..range.end * cols] {
            if self.rng.random::<bool>() {
                *w = -*w;
            }
        }
    }
}

impl Task for TeacherStudent {
    fn input_dim(&self) -> usize {
        self.config.input_dim
    }

    fn output_dim(&self) -> usize {
        self.config.outputs()
    }

    fn step(&self) -> u64 {
        self.t
    }

    fn next_into(&mut self, out: &mut StreamSample) {
        let p = self.config.period;
        if self.t > 0 && self.t % p == 0 {
            self.perturb(OutputGroup::Fast);
        }
        if self.t > 0 && self.t % (p * self.config.slow_factor) == 0 {
            self.perturb(OutputGroup::Slow);
        }
        out.input.resize(self.config.input_dim, 0.0);
        for v in out.input.iter_mut() {
            *v = self.rng.sample(StandardNormal);
        }
        let y = self.teacher.forward(&out.input).expect("teacher output is finite");
        regression_buf(&mut out.target, y.len()).copy_from_slice(y);
        self.t += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    fn small() -> TeacherStudentConfig {
        TeacherStudentConfig {
            input_dim: 4,
            hidden: 8,
            stable: 2,
            fast: 2,
            slow: 2,
            period: 10,
            slow_factor: 3,
        }
    }

    fn head(t: &TeacherStudent) -> Vec<f64> {
        t.teacher().layers()[1].weights.clone()
    }

    #[test]
    fn groups_partition_outputs() {
        let c = TeacherStudentConfig::default();
        assert_eq!(c.outputs(), 20);
        assert_eq!(c.group_of(5), OutputGroup::Stable);
        assert_eq!(c.group_of(6), OutputGroup::Fast);
        assert_eq!(c.group_of(12), OutputGroup::Fast);
        assert_eq!(c.group_of(13), OutputGroup::Slow);
        assert_eq!(c.group_range(OutputGroup::Slow), 13..20);
    }

    #[test]
    fn perturbations_follow_the_schedule() {
        let c = small();
        let mut task = TeacherStudent::new(c, stream(1, StreamId::Task));
        let hidden0 = task.teacher().layers()[0].clone();
        let bias0 = task.teacher().layers()[1].bias.clone();
        let w0 = head(&task);
        let mut prev = w0.clone();
        let rows = |g: OutputGroup| c.group_range(g).flat_map(|k| k * c.hidden..(k + 1) * c.hidden).collect::<Vec<_>>();
        let (stable, fast, slow) = (rows(OutputGroup::Stable), rows(OutputGroup::Fast), rows(OutputGroup::Slow));
        let mut fast_changes = 0;
        let mut slow_changes = 0;
        for step in 0..600u64 {
            task.next_sample();
            let cur = head(&task);
            for &i in &stable {
                assert_eq!(cur[i], w0[i]);
            }
            for &i in fast.iter().chain(&slow) {
                assert_eq!(cur[i].abs(), w0[i].abs());
            }
            let fast_changed = fast.iter().any(|&i| cur[i] != prev[i]);
            let slow_changed = slow.iter().any(|&i| cur[i] != prev[i]);
            if !(step > 0 && step % c.period == 0) {
                assert!(!fast_changed, "fast rows changed at {step}");
            }
            if !(step > 0 && step % (c.period * c.slow_factor) == 0) {
                assert!(!slow_changed, "slow rows changed at {step}");
            }
            fast_changes += usize::from(fast_changed);
            slow_changes += usize::from(slow_changed);
            prev = cur;
        }
        // 16 random-sign draws per event: a no-op event has probability 2^-16
        assert_eq!(fast_changes, 59);
        assert_eq!(slow_changes, 19);
        assert_eq!(task.teacher().layers()[0], hidden0);
        assert_eq!(task.teacher().layers()[1].bias, bias0);
    }

    #[test]
    fn target_is_teacher_output() {
        let mut task = TeacherStudent::new(small(), stream(2, StreamId::Task));
        let s = task.next_sample();
        let mut teacher = task.teacher().clone();
        match &s.target {
            super::super::Target::Regression(y) => assert_eq!(teacher.forward(&s.input).unwrap(), &y[..]),
            other => panic!("{other:?}"),
        }
    }
}
