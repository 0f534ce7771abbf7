//! The online loop and per-run records.

use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::learner::{LearnError, LinearLearner, NetLearner, OnlineLearner};
use super::metrics::{lambda_group_means, score_step, MetricAccumulator, MetricKind, MetricSeries, Summary};
use super::spec::{RunSpec, TaskSpec};
use super::{HarnessError, DATA_ROOT_ENV};
use crate::rng::{split_seed, stream, StreamId};
use crate::tasks::{Dataset, EmnistStream, LinearTracking, OutputGroup, StreamSample, Task, TeacherStudent, LINEAR_DIM};

/// Shared state for a batch of runs: where EMNIST lives, loaded at most once.
#[derive(Debug, Default)]
pub struct RunContext {
    data_root: Option<PathBuf>,
    dataset: Mutex<Option<Arc<Dataset>>>,
}

impl RunContext {
    pub fn new(data_root: Option<PathBuf>) -> Self {
        Self {
            data_root,
            dataset: Mutex::new(None),
        }
    }

    /// Data root from the environment, if set.
    pub fn from_env() -> Self {
        Self::new(std::env::var_os(DATA_ROOT_ENV).map(PathBuf::from))
    }

    /// Use an in-memory dataset instead of reading files.
    pub fn with_dataset(data: Arc<Dataset>) -> Self {
        Self {
            data_root: None,
            dataset: Mutex::new(Some(data)),
        }
    }

    pub fn dataset(&self) -> Result<Arc<Dataset>, HarnessError> {
        let mut slot = self.dataset.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(d) = slot.as_ref() {
            return Ok(Arc::clone(d));
        }
        let root = self.data_root.as_ref().ok_or_else(|| {
            HarnessError::Data(format!(
                "EMNIST runs need the dataset directory: set {DATA_ROOT_ENV} or pass --data-root \
                 (expects emnist-balanced-train-images-idx3-ubyte[.gz] and the matching labels file)"
            ))
        })?;
        let data = Arc::new(Dataset::load_emnist(root).map_err(|e| HarnessError::Data(e.to_string()))?);
        *slot = Some(Arc::clone(&data));
        Ok(data)
    }
}

/// Named parameter groups over a learner's decay-rate vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LambdaGroups {
    pub names: Vec<String>,
    pub indices: Vec<Vec<usize>>,
}

impl LambdaGroups {
    fn linear(task: &LinearTracking) -> Self {
        let (rel, irr): (Vec<usize>, Vec<usize>) = (0..LINEAR_DIM).partition(|&i| task.is_relevant(i));
        Self {
            names: vec!["relevant".into(), "irrelevant".into()],
            indices: vec![rel, irr],
        }
    }

    /// Head rows of each output group; `cols` weights per row.
    fn teacher(task: &TeacherStudent) -> Self {
        let c = task.config();
        let cols = c.hidden;
        let groups = [(OutputGroup::Stable, "stable"), (OutputGroup::Fast, "fast"), (OutputGroup::Slow, "slow")];
        Self {
            names: groups.iter().map(|(_, n)| (*n).to_string()).collect(),
            indices: groups
                .iter()
                .map(|(g, _)| {
                    let r = c.group_range(*g);
                    (r.start * cols..r.end * cols).collect()
                })
                .collect(),
        }
    }

    fn all(len: usize) -> Self {
        Self {
            names: vec!["head".into()],
            indices: vec![(0..len).collect()],
        }
    }
}

/// Mean decay rate per group, or `None` if the learner does not adapt decay.
pub fn lambda_group_probe(learner: &dyn OnlineLearner, groups: &LambdaGroups) -> Option<Vec<f64>> {
    learner.decay_rates().map(|l| lambda_group_means(&l, &groups.indices))
}

/// Task instance for one seed, and the λ grouping it defines.
pub fn build_task(spec: &RunSpec, seed: u64, ctx: &RunContext) -> Result<(Box<dyn Task>, LambdaGroups), HarnessError> {
    let rng = stream(seed, StreamId::Task);
    Ok(match &spec.task {
        TaskSpec::LinearTracking { noise_std } => {
            let t = LinearTracking::new(*noise_std, rng);
            let g = LambdaGroups::linear(&t);
            (Box::new(t), g)
        }
        TaskSpec::TeacherStudent { config } => {
            let t = TeacherStudent::new(*config, rng);
            let g = LambdaGroups::teacher(&t);
            (Box::new(t), g)
        }
        TaskSpec::Emnist { partial } => {
            let data = ctx.dataset()?;
            // the head size is only known once the learner exists
            (Box::new(EmnistStream::new(data, *partial, rng)), LambdaGroups::all(0))
        }
    })
}

pub fn build_learner(spec: &RunSpec, task: &dyn Task, seed: u64) -> Result<Box<dyn OnlineLearner>, HarnessError> {
    if spec.task.is_linear() {
        return Ok(Box::new(LinearLearner::new(&spec.learner, task.input_dim())));
    }
    let mut rng = stream(seed, StreamId::Learner);
    let l = NetLearner::new(&spec.learner, &spec.task, task.input_dim(), task.output_dim(), &mut rng)
        .map_err(|e| HarnessError::Config(format!("{}: {e}", spec.name)))?;
    Ok(Box::new(l))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub steps_per_sec: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub series: MetricSeries,
    /// Group means at each window end, aligned with `series.windows`; empty
    /// when the learner has no adaptive decay.
    pub lambda: Vec<Vec<f64>>,
    pub final_lambda: Option<Vec<f64>>,
    #[serde(skip)]
    pub timing: Option<Timing>,
}

// Wall-clock timing is not part of a record's identity.
impl PartialEq for SeedRecord {
    fn eq(&self, other: &Self) -> bool {
        self.seed == other.seed
            && self.series == other.series
            && self.lambda == other.lambda
            && self.final_lambda == other.final_lambda
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub spec: RunSpec,
    pub metric: MetricKind,
    pub groups: Vec<String>,
    pub seeds: Vec<SeedRecord>,
    /// Across seeds, of each seed's summary.
    pub summary: Summary,
    /// Across-seed mean of the final group λ.
    pub final_lambda: Option<Vec<f64>>,
}

impl RunRecord {
    pub fn mean(&self) -> Option<f64> {
        self.summary.mean
    }

    /// Final group mean λ by name.
    pub fn final_lambda_of(&self, group: &str) -> Option<f64> {
        let i = self.groups.iter().position(|g| g == group)?;
        self.final_lambda.as_ref().map(|l| l[i])
    }
}

/// Failure inside the loop: the step that failed and the learner state at that point.
#[derive(Debug, Clone)]
pub struct StreamFault {
    pub step: u64,
    pub error: LearnError,
    pub dump: serde_json::Value,
}

/// Drive `learner` over `steps` samples of `task`. Each prediction is scored
/// before the learner sees the sample's target.
pub fn run_stream(
    task: &mut dyn Task,
    learner: &mut dyn OnlineLearner,
    steps: u64,
    window: u64,
    summary_last: Option<u64>,
    metric: MetricKind,
    groups: &LambdaGroups,
) -> Result<(MetricSeries, Vec<Vec<f64>>, Option<Vec<f64>>), StreamFault> {
    let mut acc = MetricAccumulator::new(window, steps, summary_last);
    let mut lambda = Vec::new();
    let mut sample = StreamSample::empty();
    for t in 0..steps {
        task.next_into(&mut sample);
        let fault = |learner: &dyn OnlineLearner, error| StreamFault {
            step: t,
            error,
            dump: learner.dump_state(),
        };
        let v = match learner.predict(&sample.input) {
            Ok(out) => score_step(metric, out, &sample.target),
            Err(e) => return Err(fault(learner, e)),
        };
        if !v.is_finite() {
            return Err(fault(learner, LearnError::NonFinitePrediction));
        }
        let closed = acc.push(v);
        if let Err(e) = learner.learn(&sample) {
            return Err(fault(learner, e));
        }
        if closed || t + 1 == steps {
            if let Some(m) = lambda_group_probe(learner, groups) {
                lambda.push(m);
            }
        }
    }
    let final_lambda = lambda_group_probe(learner, groups);
    Ok((acc.finish(), lambda, final_lambda))
}

/// One seed of `spec`: seed `spec.seed + index`.
pub fn run_seed(spec: &RunSpec, index: u64, ctx: &RunContext) -> Result<SeedRecord, HarnessError> {
    let seed = split_seed(spec.seed, index);
    let (mut task, mut groups) = build_task(spec, seed, ctx)?;
    let mut learner = build_learner(spec, task.as_ref(), seed)?;
    if matches!(spec.task, TaskSpec::Emnist { .. }) {
        groups = LambdaGroups::all(learner.decay_rates().map_or(0, |l| l.len()));
    }
    let metric = metric_for(&spec.task);
    let start = Instant::now();
    let (series, lambda, final_lambda) = run_stream(
        task.as_mut(),
        learner.as_mut(),
        spec.steps,
        spec.window(),
        spec.summary_region(),
        metric,
        &groups,
    )
    .map_err(|f| HarnessError::Numeric {
        run: spec.name.clone(),
        seed,
        step: f.step,
        message: f.error.to_string(),
        dump: Box::new(f.dump),
    })?;
    let wall = start.elapsed().as_secs_f64();
    Ok(SeedRecord {
        seed,
        series,
        lambda,
        final_lambda,
        timing: Some(Timing {
            wall_seconds: wall,
            steps_per_sec: if wall > 0.0 { spec.steps as f64 / wall } else { 0.0 },
        }),
    })
}

pub(crate) fn metric_for(task: &TaskSpec) -> MetricKind {
    match task {
        TaskSpec::Emnist { .. } => MetricKind::Accuracy,
        _ => MetricKind::Mse,
    }
}

/// All seeds of `spec`, run in parallel on the current rayon pool.
pub fn run_experiment(spec: &RunSpec, ctx: &RunContext) -> Result<RunRecord, HarnessError> {
    spec.validate()?;
    if matches!(spec.task, TaskSpec::Emnist { .. }) {
        ctx.dataset()?;
    }
    let seeds = (0..spec.seeds)
        .into_par_iter()
        .map(|i| run_seed(spec, i, ctx))
        .collect::<Result<Vec<_>, _>>()?;
    let summaries: Vec<f64> = seeds.iter().filter_map(|s| s.series.summary).collect();
    let groups = {
        let (task, g) = build_task(spec, spec.seed, ctx)?;
        drop(task);
        g.names
    };
    let finals: Vec<&Vec<f64>> = seeds.iter().filter_map(|s| s.final_lambda.as_ref()).collect();
    let final_lambda = (!finals.is_empty() && finals.len() == seeds.len()).then(|| {
        (0..finals[0].len())
            .map(|k| finals.iter().map(|f| f[k]).sum::<f64>() / finals.len() as f64)
            .collect()
    });
    Ok(RunRecord {
        spec: spec.clone(),
        metric: metric_for(&spec.task),
        groups: if final_lambda.is_some() { groups } else { Vec::new() },
        summary: Summary::of(&summaries),
        seeds,
        final_lambda,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::spec::LearnerSpec;

    fn linear(learner: LearnerSpec, steps: u64, seeds: u64) -> RunSpec {
        RunSpec {
            name: "t".into(),
            label: None,
            steps,
            seed: 3,
            seeds,
            metric_window: Some(100),
            summary_last: None,
            task: TaskSpec::LinearTracking { noise_std: 0.0 },
            learner,
        }
    }

    fn fade() -> LearnerSpec {
        LearnerSpec::Fade { alpha: 0.1, theta_lambda: 0.01, gamma0: -1.2, clamp_decay: false }
    }

    #[test]
    fn zero_steps_gives_empty_series() {
        let r = run_experiment(&linear(fade(), 0, 2), &RunContext::default()).unwrap();
        assert!(r.seeds.iter().all(|s| s.series.windows.is_empty() && s.series.summary.is_none()));
        assert_eq!(r.summary.mean, None);
        // the decay rates are untouched
        assert_eq!(r.final_lambda_of("relevant"), Some((-1.2f64).exp()));
    }

    #[test]
    fn lambda_groups_start_equal() {
        let spec = linear(fade(), 1, 1);
        let (task, groups) = build_task(&spec, 0, &RunContext::default()).unwrap();
        let l = build_learner(&spec, task.as_ref(), 0).unwrap();
        let m = lambda_group_probe(l.as_ref(), &groups).unwrap();
        assert_eq!(m, vec![(-1.2f64).exp(); 2]);
        assert_eq!(groups.indices.iter().map(Vec::len).sum::<usize>(), LINEAR_DIM);
    }

    #[test]
    fn seeds_differ_and_rerun_is_identical() {
        let spec = linear(LearnerSpec::Sgd { alpha: 0.05 }, 2000, 3);
        let a = run_experiment(&spec, &RunContext::default()).unwrap();
        let b = run_experiment(&spec, &RunContext::default()).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.seeds.iter().map(|s| s.seed).collect::<Vec<_>>(), vec![3, 4, 5]);
        assert!(a.summary.std.unwrap() > 0.0);
        assert_eq!(a.seeds[0].series.windows.len(), 20);
        assert!(a.groups.is_empty() && a.final_lambda.is_none());
    }

    #[test]
    fn divergence_reports_step_and_state() {
        let spec = linear(LearnerSpec::Sgd { alpha: 50.0 }, 10_000, 1);
        match run_experiment(&spec, &RunContext::default()) {
            Err(HarnessError::Numeric { step, dump, seed, .. }) => {
                assert!(step > 0 && step < 10_000);
                assert_eq!(seed, 3);
                assert!(dump["params"]["w"].is_array());
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn emnist_without_data_names_the_variable() {
        let spec = RunSpec {
            task: TaskSpec::Emnist { partial: false },
            learner: LearnerSpec::Sgd { alpha: 0.01 },
            ..linear(fade(), 10, 1)
        };
        let err = run_experiment(&spec, &RunContext::new(None)).unwrap_err();
        assert_eq!(err.exit_code(), 4);
        assert!(err.to_string().contains(DATA_ROOT_ENV));
    }
}
