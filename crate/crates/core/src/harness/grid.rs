//! Cartesian hyperparameter grids over a base run.
//!
//! ```toml
//! [base]            # a full run spec
//! name = "fade_grid"
//! ...
//! [[axis]]
//! key = "learner.gamma0"
//! values = [-0.7, -1.2, -2.3]
//! [[axis]]
//! keys = ["learner.theta_alpha", "learner.theta_lambda"]   # tied: same value for both
//! values = [0.1, 0.01]
//! ```

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::run::{run_experiment, RunContext, RunRecord};
use super::spec::{apply_overrides, set_path, RunSpec};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridAxis {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub key: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub keys: Vec<String>,
    pub values: Vec<toml::Value>,
}

impl GridAxis {
    fn paths(&self) -> Vec<&str> {
        self.key.iter().chain(&self.keys).map(String::as_str).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub base: toml::Value,
    #[serde(default, rename = "axis")]
    pub axes: Vec<GridAxis>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridCell {
    pub index: usize,
    /// `(key, value)` settings of this cell, in axis order.
    pub params: Vec<(String, String)>,
    pub spec: RunSpec,
    /// `None` when the run hit a numeric fault.
    pub record: Option<RunRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fault: Option<String>,
}

impl GridCell {
    pub fn mean(&self) -> Option<f64> {
        self.record.as_ref().and_then(RunRecord::mean)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRecord {
    pub name: String,
    pub cells: Vec<GridCell>,
    /// Cell indices best first; diverged or empty cells last.
    pub ranking: Vec<usize>,
}

impl GridRecord {
    pub fn best(&self) -> Option<&GridCell> {
        self.ranking.first().map(|&i| &self.cells[i]).filter(|c| c.mean().is_some())
    }
}

impl GridSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let g: GridSpec = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        for (i, a) in g.axes.iter().enumerate() {
            if a.paths().is_empty() || a.values.is_empty() {
                return Err(HarnessError::Config(format!("axis {i} needs a key (or keys) and at least one value")));
            }
        }
        Ok(g)
    }

    pub fn name(&self) -> String {
        base_name(&self.base)
    }

    /// Every cell's spec, last axis varying fastest. `overrides` apply to the
    /// base before the axes.
    pub fn cells(&self, overrides: &[String]) -> Result<Vec<(Vec<(String, String)>, RunSpec)>, HarnessError> {
        let mut base = self.base.clone();
        apply_overrides(&mut base, overrides)?;
        let name = base_name(&base);
        let total: usize = self.axes.iter().map(|a| a.values.len()).product();
        let mut out = Vec::with_capacity(total);
        for cell in 0..total {
            let mut v = base.clone();
            let mut params = Vec::new();
            let mut rest = cell;
            let mut picks = vec![0; self.axes.len()];
            for (k, a) in self.axes.iter().enumerate().rev() {
                picks[k] = rest % a.values.len();
                rest /= a.values.len();
            }
            for (a, &p) in self.axes.iter().zip(&picks) {
                let value = &a.values[p];
                for path in a.paths() {
                    set_path(&mut v, path, value.clone())?;
                    params.push((path.to_string(), value.to_string()));
                }
            }
            set_path(&mut v, "name", toml::Value::String(format!("{name}-{cell:03}")))?;
            let spec = RunSpec::from_value(v)?;
            out.push((params, spec));
        }
        Ok(out)
    }
}

fn base_name(base: &toml::Value) -> String {
    base.get("name").and_then(toml::Value::as_str).unwrap_or("grid").to_string()
}

/// Run every cell (in parallel) and rank by the summary metric.
pub fn run_grid(grid: &GridSpec, overrides: &[String], ctx: &RunContext) -> Result<GridRecord, HarnessError> {
    let specs = grid.cells(overrides)?;
    let cells = specs
        .into_par_iter()
        .enumerate()
        .map(|(index, (params, spec))| match run_experiment(&spec, ctx) {
            Ok(r) => Ok(GridCell { index, params, spec, record: Some(r), fault: None }),
            Err(e @ HarnessError::Numeric { .. }) => Ok(GridCell {
                index,
                params,
                spec,
                record: None,
                fault: Some(e.to_string()),
            }),
            Err(e) => Err(e),
        })
        .collect::<Result<Vec<_>, _>>()?;
    let ranking = rank(&cells);
    let mut base = grid.base.clone();
    apply_overrides(&mut base, overrides)?;
    let name = base_name(&base);
    Ok(GridRecord { name, cells, ranking })
}

fn rank(cells: &[GridCell]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..cells.len()).collect();
    order.sort_by(|&a, &b| {
        let key = |i: usize| {
            let c = &cells[i];
            let m = c.mean().filter(|m| m.is_finite());
            let metric = c.record.as_ref().map(|r| r.metric);
            (m, metric)
        };
        match (key(a), key(b)) {
            ((Some(x), Some(k)), (Some(y), _)) => {
                if k.better(x, y) {
                    std::cmp::Ordering::Less
                } else if k.better(y, x) {
                    std::cmp::Ordering::Greater
                } else {
                    a.cmp(&b)
                }
            }
            ((Some(_), _), (None, _)) => std::cmp::Ordering::Less,
            ((None, _), (Some(_), _)) => std::cmp::Ordering::Greater,
            _ => a.cmp(&b),
        }
    });
    order
}
