//! Result files.
//!
//! For a run named `n`: `n.seed<k>.csv` per seed (`step,<metric>,lambda_<group>...`
//! per window), `n.json` (summary and the run spec as executed) and
//! `n.timing.json`. Everything except the timing file is a pure function of the
//! record, so identical records give identical bytes.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::grid::GridRecord;
use super::metrics::{MetricKind, Summary};
use super::run::RunRecord;
use super::spec::RunSpec;
use super::HarnessError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), HarnessError> {
    let mut s = serde_json::to_string_pretty(value).expect("records serialize");
    s.push('\n');
    write_file(path, s.as_bytes())
}

fn csv_bytes(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

#[derive(Serialize)]
struct SeedJson<'a> {
    seed: u64,
    summary: Option<f64>,
    windows: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    final_lambda: Option<&'a [f64]>,
}

#[derive(Serialize)]
struct RunJson<'a> {
    name: &'a str,
    label: &'a str,
    metric: MetricKind,
    steps: u64,
    summary: &'a Summary,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    groups: Vec<(&'a str, f64)>,
    seeds: Vec<SeedJson<'a>>,
    spec: &'a RunSpec,
}

#[derive(Serialize)]
struct TimingJson<'a> {
    name: &'a str,
    seeds: Vec<serde_json::Value>,
}

/// Write the CSV, JSON and timing files of `record` into `dir`; returns the paths.
pub fn write_run(record: &RunRecord, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = &record.spec.name;
    let mut paths = Vec::new();
    let mut header = vec!["step".to_string(), record.metric.name().to_string()];
    header.extend(record.groups.iter().map(|g| format!("lambda_{g}")));
    for s in &record.seeds {
        let rows: Vec<Vec<String>> = s
            .series
            .windows
            .iter()
            .enumerate()
            .map(|(i, w)| {
                let mut row = vec![w.step.to_string(), w.value.to_string()];
                if !record.groups.is_empty() {
                    if let Some(l) = s.lambda.get(i) {
                        row.extend(l.iter().map(f64::to_string));
                    }
                }
                row
            })
            .collect();
        let path = dir.join(format!("{name}.seed{}.csv", s.seed));
        write_file(&path, &csv_bytes(&header, &rows))?;
        paths.push(path);
    }

    let json = RunJson {
        name,
        label: record.spec.label(),
        metric: record.metric,
        steps: record.spec.steps,
        summary: &record.summary,
        groups: match &record.final_lambda {
            Some(l) => record.groups.iter().map(String::as_str).zip(l.iter().copied()).collect(),
            None => Vec::new(),
        },
        seeds: record
            .seeds
            .iter()
            .map(|s| SeedJson {
                seed: s.seed,
                summary: s.series.summary,
                windows: s.series.windows.len(),
                final_lambda: s.final_lambda.as_deref(),
            })
            .collect(),
        spec: &record.spec,
    };
    let path = dir.join(format!("{name}.json"));
    write_json(&path, &json)?;
    paths.push(path);

    let timing = TimingJson {
        name,
        seeds: record
            .seeds
            .iter()
            .map(|s| serde_json::json!({ "seed": s.seed, "timing": s.timing }))
            .collect(),
    };
    let path = dir.join(format!("{name}.timing.json"));
    write_json(&path, &timing)?;
    paths.push(path);
    Ok(paths)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

/// `<name>.grid.csv` (one row per cell, best first) and `<name>.grid.json`.
pub fn write_grid(record: &GridRecord, dir: &Path) -> Result<Vec<PathBuf>, HarnessError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let keys: Vec<String> = record.cells.first().map(|c| c.params.iter().map(|(k, _)| k.clone()).collect()).unwrap_or_default();
    let mut header = vec!["rank".to_string(), "cell".into(), "name".into()];
    header.extend(keys.iter().cloned());
    header.extend(["mean", "std", "sem", "seeds", "status"].map(String::from));
    let rows: Vec<Vec<String>> = record
        .ranking
        .iter()
        .enumerate()
        .map(|(rank, &i)| {
            let c = &record.cells[i];
            let mut row = vec![(rank + 1).to_string(), c.index.to_string(), c.spec.name.clone()];
            row.extend(c.params.iter().map(|(_, v)| v.clone()));
            let s = c.record.as_ref().map(|r| &r.summary);
            row.push(opt(s.and_then(|s| s.mean)));
            row.push(opt(s.and_then(|s| s.std)));
            row.push(opt(s.and_then(|s| s.sem)));
            row.push(s.map_or(0, |s| s.n).to_string());
            row.push(if c.fault.is_some() { "diverged" } else { "ok" }.to_string());
            row
        })
        .collect();
    let csv_path = dir.join(format!("{}.grid.csv", record.name));
    write_file(&csv_path, &csv_bytes(&header, &rows))?;

    #[derive(Serialize)]
    struct CellJson<'a> {
        index: usize,
        name: &'a str,
        params: &'a [(String, String)],
        summary: Option<&'a Summary>,
        #[serde(skip_serializing_if = "Option::is_none")]
        fault: Option<&'a str>,
        spec: &'a RunSpec,
    }
    let cells: Vec<CellJson> = record
        .cells
        .iter()
        .map(|c| CellJson {
            index: c.index,
            name: &c.spec.name,
            params: &c.params,
            summary: c.record.as_ref().map(|r| &r.summary),
            fault: c.fault.as_deref(),
            spec: &c.spec,
        })
        .collect();
    let json_path = dir.join(format!("{}.grid.json", record.name));
    write_json(&json_path, &serde_json::json!({ "name": record.name, "ranking": record.ranking, "cells": cells }))?;
    Ok(vec![csv_path, json_path])
}

/// Plain-text table: one row per run with mean, std and SEM across seeds.
pub fn format_summary_table(records: &[RunRecord]) -> String {
    let width = records.iter().map(|r| r.spec.label().len()).max().unwrap_or(0).max(6);
    let mut out = String::new();
    let _ = writeln!(out, "{:<width$}  {:>9}  {:>12}  {:>9}  {:>9}  seeds", "run", "metric", "mean", "std", "sem");
    for r in records {
        let f = |v: Option<f64>, p: usize| v.map_or_else(|| "-".to_string(), |x| format!("{x:.p$}"));
        let _ = writeln!(
            out,
            "{:<width$}  {:>9}  {:>12}  {:>9}  {:>9}  {}",
            r.spec.label(),
            r.metric.name(),
            f(r.summary.mean, 4),
            f(r.summary.std, 4),
            f(r.summary.sem, 4),
            r.summary.n
        );
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{run_experiment, LearnerSpec, RunContext, TaskSpec};

    fn record(seed: u64) -> RunRecord {
        let spec = RunSpec {
            name: "fade".into(),
            label: Some("FADE".into()),
            steps: 2500,
            seed,
            seeds: 2,
            metric_window: Some(1000),
            summary_last: None,
            task: TaskSpec::LinearTracking { noise_std: 1.0 },
            learner: LearnerSpec::Fade { alpha: 0.1, theta_lambda: 0.01, gamma0: -1.2, clamp_decay: false },
        };
        run_experiment(&spec, &RunContext::default()).unwrap()
    }

    #[test]
    fn files_round_trip_and_are_stable() {
        let dir = tempfile::tempdir().unwrap();
        let r = record(7);
        let paths = write_run(&r, dir.path()).unwrap();
        let names: Vec<String> = paths.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(names, ["fade.seed7.csv", "fade.seed8.csv", "fade.json", "fade.timing.json"]);

        let csv = fs::read_to_string(&paths[0]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "step,mse,lambda_relevant,lambda_irrelevant");
        // 2500 steps in windows of 1000: two full windows and one partial
        assert_eq!(lines.len(), 4);
        assert!(lines[3].starts_with("2500,"));

        let json: serde_json::Value = serde_json::from_str(&fs::read_to_string(&paths[2]).unwrap()).unwrap();
        let summary: Summary = serde_json::from_value(json["summary"].clone()).unwrap();
        assert_eq!(summary, r.summary);
        let spec: RunSpec = serde_json::from_value(json["spec"].clone()).unwrap();
        assert_eq!(spec, r.spec);

        let first: Vec<Vec<u8>> = paths[..3].iter().map(|p| fs::read(p).unwrap()).collect();
        write_run(&record(7), dir.path()).unwrap();
        let second: Vec<Vec<u8>> = paths[..3].iter().map(|p| fs::read(p).unwrap()).collect();
        assert_eq!(first, second);
    }

    #[test]
    fn table_lists_every_run() {
        let t = format_summary_table(&[record(0)]);
        assert_eq!(t.lines().count(), 2);
        assert!(t.lines().nth(1).unwrap().starts_with("FADE"));
    }
}
