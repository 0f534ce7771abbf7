//! Independent checkers for the update rules and the network code.
//!
//! Nothing here reuses the arithmetic under test: sensitivities are checked
//! against full re-simulation, gradients against central differences, and the
//! linear rules against separately written interpreters.

mod gradcheck;
mod replay;
mod sensitivity;
mod suite;

pub use gradcheck::{ce_head_gradient_check, mlp_gradient_check, relative_error, GradCheckReport, REL_ERR_FLOOR};
pub use replay::{replay_trace_check, Algorithm, Interpreter, ReplayReport, ReplaySpec};
pub use sensitivity::{finite_diff_sensitivity, ProbeError, SensitivityReport, TrajectoryProbe};
pub use suite::{gradient_checks, reduction_checks, replay_checks, run_oracle_suite, sensitivity_check, OracleCheck};

/// Central-difference gradient of `f` at `point`, one coordinate at a time.
pub fn numerical_gradient<F>(f: F, point: &[f64], eps: f64) -> Vec<f64>
where
    F: Fn(&[f64]) -> f64,
{
    assert!(eps > 0.0, "finite-difference step must be positive");
    let mut x = point.to_vec();
    (0..point.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(&x);
            x[i] = orig - eps;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}
