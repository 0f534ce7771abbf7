//! Seedable non-stationary streams.
//!
//! A task owns its random stream and a step counter `t` (samples emitted so
//! far). Scheduled changes to the target (sign flips, teacher perturbations,
//! label permutations) are applied at step boundaries, before the sample for
//! step `t` is drawn.

mod emnist;
mod idx;
mod linear;
mod teacher;

pub use emnist::{Dataset, EmnistStream, LabelPermutation, EMNIST_CLASSES, EMNIST_PERIOD, EMNIST_STABLE_CLASSES};
pub use idx::{load_emnist_dir, load_idx_images, load_idx_labels, read_idx_pair, IdxError, IdxImages};
pub use linear::{LinearTracking, FLIP_PERIOD, LINEAR_DIM, LINEAR_RELEVANT};
pub use teacher::{OutputGroup, TeacherStudent, TeacherStudentConfig};

use crate::meta_optim::HeadTarget;

#[derive(Debug, Clone, PartialEq)]
pub enum Target {
    Regression(Vec<f64>),
    Class(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct StreamSample {
    pub input: Vec<f64>,
    pub target: Target,
}

impl StreamSample {
    pub fn empty() -> Self {
        Self {
            input: Vec::new(),
            target: Target::Regression(Vec::new()),
        }
    }

    pub fn head_target(&self) -> HeadTarget<'_> {
        match &self.target {
            Target::Regression(y) => HeadTarget::Regression(y),
            Target::Class(c) => HeadTarget::Class(*c),
        }
    }

    /// Scalar regression target; panics on other shapes.
    pub fn scalar_target(&self) -> f64 {
        match &self.target {
            Target::Regression(y) if y.len() == 1 => y[0],
            other => panic!("expected a scalar regression target, got {other:?}"),
        }
    }
}

pub trait Task: Send {
    fn input_dim(&self) -> usize;
    fn output_dim(&self) -> usize;
    /// Samples emitted so far.
    fn step(&self) -> u64;
    /// Draw the next sample into `out`, reusing its buffers.
    fn next_into(&mut self, out: &mut StreamSample);

    fn next_sample(&mut self) -> StreamSample {
        let mut s = StreamSample::empty();
        self.next_into(&mut s);
        s
    }
}

/// Resize a regression target buffer in place.
pub(crate) fn regression_buf(target: &mut Target, len: usize) -> &mut Vec<f64> {
    if !matches!(target, Target::Regression(_)) {
        *target = Target::Regression(Vec::new());
    }
    match target {
        Target::Regression(v) => {
            v.resize(len, 0.0);
            v
        }
        Target::Class(_) => unreachable!(),
    }
}
