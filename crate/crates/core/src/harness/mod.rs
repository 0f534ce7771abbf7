//! Experiment runner: builds a task and a learner from a [`RunSpec`], runs the
//! online loop over one or more seeds, and writes CSV/JSON results.
//!
//! Protocol per step: draw a sample, predict on the current weights, score that
//! prediction, then update. The score never sees post-update weights.

mod grid;
mod learner;
mod metrics;
mod output;
mod run;
mod spec;

use std::path::PathBuf;

pub use grid::{run_grid, GridAxis, GridCell, GridRecord, GridSpec};
pub use learner::{LearnError, LinearLearner, NetLearner, OnlineLearner};
pub use metrics::{
    compute_metrics, lambda_group_means, score_step, MetricAccumulator, MetricKind, MetricSeries, Summary, WindowPoint,
};
pub use output::{format_summary_table, write_grid, write_run};
pub use run::{
    build_learner, build_task, lambda_group_probe, run_experiment, run_seed, run_stream, LambdaGroups, RunContext,
    RunRecord, SeedRecord, StreamFault, Timing,
};
pub use spec::{apply_overrides, parse_override_value, parse_run_list, set_path, LearnerSpec, RunSpec, TaskSpec};

/// Environment variable naming the EMNIST directory.
pub const DATA_ROOT_ENV: &str = "FADE_DATA_ROOT";

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric fault in run {run}, seed {seed}, step {step}: {message}")]
    Numeric {
        run: String,
        seed: u64,
        step: u64,
        message: String,
        /// Learner state when the fault was detected.
        dump: Box<serde_json::Value>,
    },
    #[error("data error: {0}")]
    Data(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    /// Process exit status for this error category.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Config(_) | HarnessError::Io { .. } => 2,
            HarnessError::Numeric { .. } => 3,
            HarnessError::Data(_) => 4,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_category() {
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 2);
        assert_eq!(HarnessError::Data("x".into()).exit_code(), 4);
        let n = HarnessError::Numeric {
            run: "r".into(),
            seed: 0,
            step: 5,
            message: "nan".into(),
            dump: Box::new(serde_json::Value::Null),
        };
        assert_eq!(n.exit_code(), 3);
        assert!(n.to_string().contains("step 5"));
    }
}
