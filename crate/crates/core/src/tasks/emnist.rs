//! Label-permuted EMNIST: one image per step, labels relabelled by a fresh
//! random permutation every 2500 steps.
//!
//! Images are drawn uniformly with replacement. In partial mode 24 classes,
//! chosen once per stream, keep their labels; the other 23 are permuted among
//! themselves.

use std::path::Path;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::seq::SliceRandom;
use rand::Rng;

use super::idx::{load_emnist_dir, IdxError, IdxImages};
use super::{StreamSample, Target, Task};
use crate::rng::StreamRng;

pub const EMNIST_CLASSES: usize = 47;
pub const EMNIST_PERIOD: u64 = 2500;
pub const EMNIST_STABLE_CLASSES: usize = 24;

/// Images kept as bytes; scaled to `[0, 1]` when a sample is emitted.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pixels: Vec<u8>,
    labels: Vec<u8>,
    dim: usize,
    classes: usize,
}

impl Dataset {
    pub fn new(images: IdxImages, labels: Vec<u8>, classes: usize) -> Self {
        assert_eq!(images.count, labels.len(), "image/label count mismatch");
        assert!(labels.iter().all(|&l| usize::from(l) < classes), "label out of range");
        Self {
            dim: images.rows * images.cols,
            pixels: images.pixels,
            labels,
            classes,
        }
    }

    /// EMNIST Balanced training split from `root`.
    pub fn load_emnist(root: &Path) -> Result<Self, IdxError> {
        let (images, labels) = load_emnist_dir(root, EMNIST_CLASSES)?;
        Ok(Self::new(images, labels, EMNIST_CLASSES))
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn label(&self, i: usize) -> usize {
        usize::from(self.labels[i])
    }

    pub fn image_into(&self, i: usize, out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.pixels[i * self.dim..(i + 1) * self.dim].iter().map(|&p| f64::from(p) / 255.0));
    }
}

/// Label map `class -> emitted label`, optionally fixing a set of stable classes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelPermutation {
    perm: Vec<usize>,
    /// Classes that move; all of them in full mode.
    movable: Vec<usize>,
}

impl LabelPermutation {
    pub fn identity(classes: usize) -> Self {
        Self {
            perm: (0..classes).collect(),
            movable: (0..classes).collect(),
        }
    }

    /// Identity on `stable`; refreshes permute only the remaining classes.
    pub fn with_stable(classes: usize, stable: &[usize]) -> Self {
        assert!(stable.iter().all(|&c| c < classes), "stable class out of range");
        let movable = (0..classes).filter(|c| !stable.contains(c)).collect();
        Self {
            perm: (0..classes).collect(),
            movable,
        }
    }

    /// Draw a fresh uniform permutation of the movable classes.
    pub fn refresh<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut images = self.movable.clone();
        images.shuffle(rng);
        for (&c, &to) in self.movable.iter().zip(&images) {
            self.perm[c] = to;
        }
    }

    pub fn apply(&self, class: usize) -> usize {
        self.perm[class]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.perm
    }

    pub fn stable_classes(&self) -> Vec<usize> {
        (0..self.perm.len()).filter(|c| !self.movable.contains(c)).collect()
    }
}

#[derive(Debug, Clone)]
pub struct EmnistStream {
    data: Arc<Dataset>,
    perm: LabelPermutation,
    period: u64,
    t: u64,
    rng: StreamRng,
}

impl EmnistStream {
    /// In partial mode the stable classes are drawn from `rng` here.
    pub fn new(data: Arc<Dataset>, partial: bool, mut rng: StreamRng) -> Self {
        assert!(!data.is_empty(), "dataset is empty");
        let classes = data.classes();
        let perm = if partial {
            let mut stable = sample(&mut rng, classes, EMNIST_STABLE_CLASSES.min(classes)).into_vec();
            stable.sort_unstable();
            LabelPermutation::with_stable(classes, &stable)
        } else {
            LabelPermutation::identity(classes)
        };
        Self {
            data,
            perm,
            period: EMNIST_PERIOD,
            t: 0,
            rng,
        }
    }

    pub fn with_period(mut self, period: u64) -> Self {
        assert!(period > 0);
        self.period = period;
        self
    }

    pub fn permutation(&self) -> &LabelPermutation {
        &self.perm
    }

    pub fn dataset(&self) -> &Dataset {
        &self.data
    }
}

impl Task for EmnistStream {
    fn input_dim(&self) -> usize {
        self.data.dim()
    }

    fn output_dim(&self) -> usize {
        self.data.classes()
    }

    fn step(&self) -> u64 {
        self.t
    }

    fn next_into(&mut self, out: &mut StreamSample) {
        if self.t % self.period == 0 {
            self.perm.refresh(&mut self.rng);
        }
        let i = self.rng.random_range(0..self.data.len());
        self.data.image_into(i, &mut out.input);
        out.target = Target::Class(self.perm.apply(self.data.label(i)));
        self.t += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, StreamId};

    fn toy(classes: usize, n: usize) -> Arc<Dataset> {
        // image i is a single pixel holding i, so the source of each sample is visible
        let images = IdxImages {
            count: n,
            rows: 1,
            cols: 1,
            pixels: (0..n).map(|i| i as u8).collect(),
        };
        let labels = (0..n).map(|i| (i % classes) as u8).collect();
        Arc::new(Dataset::new(images, labels, classes))
    }

    fn is_bijection(p: &[usize]) -> bool {
        let mut seen = vec![false; p.len()];
        p.iter().all(|&v| v < p.len() && !std::mem::replace(&mut seen[v], true))
    }

    #[test]
    fn pixels_scaled_to_unit_interval() {
        let images = IdxImages {
            count: 1,
            rows: 1,
            cols: 3,
            pixels: vec![0, 128, 255],
        };
        let d = Dataset::new(images, vec![0], 2);
        let mut v = Vec::new();
        d.image_into(0, &mut v);
        assert_eq!(v, vec![0.0, 128.0 / 255.0, 1.0]);
    }

    #[test]
    fn labels_constant_within_a_task() {
        let data = toy(EMNIST_CLASSES, 200);
        let mut s = EmnistStream::new(data, false, stream(1, StreamId::Task)).with_period(50);
        for _task in 0..20 {
            let mut seen = std::collections::HashMap::new();
            for _ in 0..50 {
                let smp = s.next_sample();
                let img = (smp.input[0] * 255.0).round() as usize;
                let Target::Class(c) = smp.target else { unreachable!() };
                assert_eq!(*seen.entry(img).or_insert(c), c);
            }
        }
    }

    #[test]
    fn refresh_keeps_bijection_and_moves_at_boundaries() {
        let data = toy(EMNIST_CLASSES, 100);
        let mut s = EmnistStream::new(data, false, stream(2, StreamId::Task)).with_period(3);
        let mut prev = s.permutation().as_slice().to_vec();
        for step in 0..6000u64 {
            s.next_sample();
            let cur = s.permutation().as_slice().to_vec();
            assert!(is_bijection(&cur));
            if step % 3 != 0 {
                assert_eq!(cur, prev);
            }
            prev = cur;
        }
    }

    #[test]
    fn partial_mode_fixes_stable_classes() {
        let data = toy(EMNIST_CLASSES, 100);
        let mut s = EmnistStream::new(data, true, stream(3, StreamId::Task)).with_period(1);
        let stable = s.permutation().stable_classes();
        assert_eq!(stable.len(), EMNIST_STABLE_CLASSES);
        let mut moved = vec![false; EMNIST_CLASSES];
        for _ in 0..500 {
            s.next_sample();
            let p = s.permutation();
            for &c in &stable {
                assert_eq!(p.apply(c), c);
            }
            for c in 0..EMNIST_CLASSES {
                if !stable.contains(&c) {
                    assert!(!stable.contains(&p.apply(c)));
                    moved[c] |= p.apply(c) != c;
                }
            }
        }
        assert_eq!(moved.iter().filter(|&&m| m).count(), EMNIST_CLASSES - EMNIST_STABLE_CLASSES);
    }

    #[test]
    fn permutations_are_uniform() {
        // chi-square over the 120 permutations of 5 classes, 10^4 refreshes.
        let mut perm = LabelPermutation::identity(5);
        let mut rng = stream(4, StreamId::Probe);
        let mut counts = std::collections::HashMap::<Vec<usize>, u64>::new();
        let n = 10_000u64;
        for _ in 0..n {
            perm.refresh(&mut rng);
            *counts.entry(perm.as_slice().to_vec()).or_default() += 1;
        }
        assert_eq!(counts.len(), 120);
        assert!(counts.contains_key(&vec![0, 1, 2, 3, 4]));
        let e = n as f64 / 120.0;
        let chi2: f64 = counts.values().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 119 degrees of freedom: the 0.999 quantile is about 173.6
        assert!(chi2 < 173.6, "chi2 {chi2}");
    }
}
