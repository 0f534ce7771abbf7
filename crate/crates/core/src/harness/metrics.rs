//! Windowed series and summaries of a per-step metric.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricKind {
    /// Squared error averaged over outputs; lower is better.
    Mse,
    /// Arg-max accuracy; higher is better.
    Accuracy,
}

impl MetricKind {
    pub fn name(self) -> &'static str {
        match self {
            MetricKind::Mse => "mse",
            MetricKind::Accuracy => "accuracy",
        }
    }

    /// Whether `a` ranks strictly ahead of `b`.
    pub fn better(self, a: f64, b: f64) -> bool {
        match self {
            MetricKind::Mse => a < b,
            MetricKind::Accuracy => a > b,
        }
    }
}

/// Per-step score of a pre-update output.
pub fn score_step(kind: MetricKind, output: &[f64], target: &crate::tasks::Target) -> f64 {
    use crate::tasks::Target;
    match (kind, target) {
        (MetricKind::Mse, Target::Regression(y)) => {
            let mut se = 0.0;
            for (t, o) in y.iter().zip(output) {
                se += (t - o) * (t - o);
            }
            se / y.len() as f64
        }
        (MetricKind::Accuracy, Target::Class(label)) => {
            let argmax = output
                .iter()
                .enumerate()
                .fold(0, |best, (k, &z)| if z > output[best] { k } else { best });
            f64::from(u8::from(argmax == *label))
        }
        _ => panic!("metric {kind:?} does not apply to target {target:?}"),
    }
}

/// Mean of one window of steps `(end - len, end]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowPoint {
    /// Steps completed at the end of the window.
    pub step: u64,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    pub windows: Vec<WindowPoint>,
    /// Mean over the summary region; `None` if no step fell in it.
    pub summary: Option<f64>,
}

/// Streaming version of [`compute_metrics`] for runs of known length.
#[derive(Debug, Clone)]
pub struct MetricAccumulator {
    window: u64,
    summary_from: u64,
    t: u64,
    win_sum: f64,
    win_len: u64,
    sum: f64,
    comp: f64,
    count: u64,
    windows: Vec<WindowPoint>,
}

impl MetricAccumulator {
    /// The summary covers the final `summary_last` of `total` steps, or all of them.
    pub fn new(window: u64, total: u64, summary_last: Option<u64>) -> Self {
        assert!(window > 0, "window must be positive");
        let summary_from = summary_last.map_or(0, |n| total.saturating_sub(n));
        Self {
            window,
            summary_from,
            t: 0,
            win_sum: 0.0,
            win_len: 0,
            sum: 0.0,
            comp: 0.0,
            count: 0,
            windows: Vec::with_capacity(usize::try_from(total.div_ceil(window)).unwrap_or(0)),
        }
    }

    /// Record one step; returns true when it closed a window.
    pub fn push(&mut self, v: f64) -> bool {
        if self.t >= self.summary_from {
            // Neumaier summation keeps the long-run mean exact to a few ulps
            let s = self.sum + v;
            if self.sum.abs() >= v.abs() {
                self.comp += (self.sum - s) + v;
            } else {
                self.comp += (v - s) + self.sum;
            }
            self.sum = s;
            self.count += 1;
        }
        self.t += 1;
        self.win_sum += v;
        self.win_len += 1;
        if self.win_len == self.window {
            self.close();
            true
        } else {
            false
        }
    }

    fn close(&mut self) {
        self.windows.push(WindowPoint {
            step: self.t,
            value: self.win_sum / self.win_len as f64,
        });
        self.win_sum = 0.0;
        self.win_len = 0;
    }

    /// Close any partial final window and return the series.
    pub fn finish(mut self) -> MetricSeries {
        if self.win_len > 0 {
            self.close();
        }
        let summary = (self.count > 0).then(|| (self.sum + self.comp) / self.count as f64);
        MetricSeries {
            windows: self.windows,
            summary,
        }
    }
}

/// Windowed means of `values` (a final partial window is kept) and the mean of
/// the last `summary_last` values (all of them if `None`).
pub fn compute_metrics(values: &[f64], window: u64, summary_last: Option<u64>) -> MetricSeries {
    let mut acc = MetricAccumulator::new(window, values.len() as u64, summary_last);
    for &v in values {
        acc.push(v);
    }
    acc.finish()
}

/// Across-seed statistics of per-seed summaries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: Option<f64>,
    /// Sample standard deviation (n - 1 denominator); `None` below two seeds.
    pub std: Option<f64>,
    /// Standard error of the mean, `std / sqrt(n)`.
    pub sem: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len();
        if n == 0 {
            return Self { n, mean: None, std: None, sem: None };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let (std, sem) = if n >= 2 {
            let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
            let std = var.sqrt();
            (Some(std), Some(std / (n as f64).sqrt()))
        } else {
            (None, None)
        };
        Self {
            n,
            mean: Some(mean),
            std,
            sem,
        }
    }
}

/// Mean of `values` over each group of indices; empty groups give NaN.
pub fn lambda_group_means(values: &[f64], groups: &[Vec<usize>]) -> Vec<f64> {
    groups
        .iter()
        .map(|g| g.iter().map(|&i| values[i]).sum::<f64>() / g.len() as f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tasks::Target;

    #[test]
    fn constant_error_mse() {
        let values: Vec<f64> = (0..10).map(|_| score_step(MetricKind::Mse, &[0.0], &Target::Regression(vec![2.0]))).collect();
        let m = compute_metrics(&values, 5, None);
        assert_eq!(m.summary, Some(4.0));
        assert_eq!(m.windows, vec![WindowPoint { step: 5, value: 4.0 }, WindowPoint { step: 10, value: 4.0 }]);
    }

    #[test]
    fn mse_averages_over_outputs() {
        let v = score_step(MetricKind::Mse, &[0.0, 1.0], &Target::Regression(vec![2.0, 1.0]));
        assert_eq!(v, 2.0);
    }

    #[test]
    fn alternating_accuracy() {
        let values: Vec<f64> = (0..100)
            .map(|i| score_step(MetricKind::Accuracy, &[1.0, 0.0], &Target::Class(i % 2)))
            .collect();
        assert_eq!(compute_metrics(&values, 10, None).summary, Some(0.5));
    }

    #[test]
    fn partial_final_window_and_tail_summary() {
        let values: Vec<f64> = (1..=7).map(f64::from).collect();
        let m = compute_metrics(&values, 3, Some(2));
        assert_eq!(m.windows.len(), 3);
        assert_eq!(m.windows[2], WindowPoint { step: 7, value: 7.0 });
        assert_eq!(m.summary, Some(6.5));
        assert_eq!(compute_metrics(&values, 3, Some(100)).summary, Some(4.0));
    }

    #[test]
    fn empty_run_has_no_summary() {
        let m = compute_metrics(&[], 10, None);
        assert!(m.windows.is_empty());
        assert_eq!(m.summary, None);
    }

    #[test]
    fn summary_statistics() {
        let s = Summary::of(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, Some(2.5));
        let std = (5.0f64 / 3.0).sqrt();
        assert!((s.std.unwrap() - std).abs() < 1e-15);
        assert!((s.sem.unwrap() - std / 2.0).abs() < 1e-15);
        assert_eq!(Summary::of(&[3.0]).std, None);
    }

    #[test]
    fn group_means() {
        let m = lambda_group_means(&[1.0, 2.0, 3.0, 4.0], &[vec![0, 3], vec![1]]);
        assert_eq!(m, vec![2.5, 2.0]);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn windows_reaverage_to_lifetime_mean(values in prop::collection::vec(-100.0f64..100.0, 1..20), window in 1u64..8, reps in 1usize..6) {
                // make the length a multiple of the window
                let mut v = Vec::new();
                while v.len() < values.len() * reps || v.len() as u64 % window != 0 {
                    v.push(values[v.len() % values.len()]);
                }
                let m = compute_metrics(&v, window, None);
                let re = m.windows.iter().map(|w| w.value).sum::<f64>() / m.windows.len() as f64;
                prop_assert!((re - m.summary.unwrap()).abs() <= 1e-9 * (1.0 + re.abs()));
                prop_assert_eq!(m.windows.len() as u64, v.len() as u64 / window);
            }
        }
    }
}
