//! Online per-parameter weight-decay adaptation (FADE), step-size adaptation
//! (IDBD), their combinations, reference optimizers, and the streaming
//! benchmarks used to compare them.
//!
//! Module map:
//!
//! - [`meta_optim`]: FADE / IDBD update rules on linear predictors and network heads.
//! - [`baselines`]: SGD, Adam(W) and weight clipping.
//! - [`net`]: a small fully-connected network with explicit backprop, and the
//!   composed learner that lets FADE own the head.
//! - [`tasks`]: seedable non-stationary streams (linear tracking, teacher-student,
//!   label-permuted EMNIST) and the IDX loader.
//! - [`oracle`]: independent checkers (finite differences, replay interpreters).
//! - [`harness`]: declarative runs, grids, metrics and result files.

pub mod baselines;
pub mod harness;
pub mod meta_optim;
pub mod net;
pub mod oracle;
pub mod rng;
pub mod tasks;
