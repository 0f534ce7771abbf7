//! Declarative run descriptions, read from TOML.

use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::baselines::AdamConsts;
use crate::tasks::TeacherStudentConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum TaskSpec {
    LinearTracking {
        noise_std: f64,
    },
    TeacherStudent {
        #[serde(default)]
        config: TeacherStudentConfig,
    },
    Emnist {
        #[serde(default)]
        partial: bool,
    },
}

impl TaskSpec {
    pub fn default_window(&self) -> u64 {
        match self {
            TaskSpec::LinearTracking { .. } => 1000,
            TaskSpec::TeacherStudent { .. } => 10_000,
            TaskSpec::Emnist { .. } => crate::tasks::EMNIST_PERIOD,
        }
    }

    pub fn default_summary_last(&self) -> Option<u64> {
        match self {
            TaskSpec::TeacherStudent { .. } => Some(500_000),
            _ => None,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, TaskSpec::LinearTracking { .. })
    }
}

/// Named method with the hyperparameters it consumes.
///
/// Decay rates `lambda` are per-step multiplicative factors `w <- (1 - lambda) w`.
/// `adamw` takes `weight_decay` in the usual AdamW units, i.e. the per-step factor
/// is `alpha * weight_decay`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerSpec {
    Sgd {
        alpha: f64,
    },
    SgdWd {
        alpha: f64,
        lambda: f64,
    },
    Adam {
        alpha: f64,
        #[serde(default)]
        adam: AdamConsts,
    },
    Adamw {
        alpha: f64,
        weight_decay: f64,
        #[serde(default)]
        adam: AdamConsts,
    },
    SgdWclip {
        alpha: f64,
        kappa: f64,
    },
    Idbd {
        theta_alpha: f64,
        beta0: f64,
    },
    IdbdWd {
        theta_alpha: f64,
        beta0: f64,
        lambda: f64,
    },
    Fade {
        alpha: f64,
        theta_lambda: f64,
        gamma0: f64,
        #[serde(default)]
        clamp_decay: bool,
    },
    FadeAdam {
        alpha: f64,
        theta_lambda: f64,
        gamma0: f64,
        #[serde(default)]
        clamp_decay: bool,
        #[serde(default)]
        adam: AdamConsts,
    },
    FadeIdbd {
        theta_alpha: f64,
        theta_lambda: f64,
        beta0: f64,
        gamma0: f64,
        #[serde(default)]
        clamp_decay: bool,
    },
    Coupled {
        theta_alpha: f64,
        theta_lambda: f64,
        beta0: f64,
        gamma0: f64,
        #[serde(default)]
        clamp_decay: bool,
    },
}

impl LearnerSpec {
    pub fn method(&self) -> &'static str {
        match self {
            LearnerSpec::Sgd { .. } => "sgd",
            LearnerSpec::SgdWd { .. } => "sgd_wd",
            LearnerSpec::Adam { .. } => "adam",
            LearnerSpec::Adamw { .. } => "adamw",
            LearnerSpec::SgdWclip { .. } => "sgd_wclip",
            LearnerSpec::Idbd { .. } => "idbd",
            LearnerSpec::IdbdWd { .. } => "idbd_wd",
            LearnerSpec::Fade { .. } => "fade",
            LearnerSpec::FadeAdam { .. } => "fade_adam",
            LearnerSpec::FadeIdbd { .. } => "fade_idbd",
            LearnerSpec::Coupled { .. } => "coupled",
        }
    }

    fn supports(&self, task: &TaskSpec) -> bool {
        match self {
            LearnerSpec::Sgd { .. } | LearnerSpec::SgdWd { .. } | LearnerSpec::Fade { .. } => true,
            LearnerSpec::Idbd { .. }
            | LearnerSpec::IdbdWd { .. }
            | LearnerSpec::FadeIdbd { .. }
            | LearnerSpec::Coupled { .. } => task.is_linear(),
            LearnerSpec::Adam { .. }
            | LearnerSpec::Adamw { .. }
            | LearnerSpec::SgdWclip { .. }
            | LearnerSpec::FadeAdam { .. } => !task.is_linear(),
        }
    }

    /// `(name, value, must be positive)` for every numeric hyperparameter.
    fn numbers(&self) -> Vec<(&'static str, f64, bool)> {
        match *self {
            LearnerSpec::Sgd { alpha } => vec![("alpha", alpha, true)],
            LearnerSpec::SgdWd { alpha, lambda } => vec![("alpha", alpha, true), ("lambda", lambda, false)],
            LearnerSpec::Adam { alpha, .. } => vec![("alpha", alpha, true)],
            LearnerSpec::Adamw { alpha, weight_decay, .. } => {
                vec![("alpha", alpha, true), ("weight_decay", weight_decay, false)]
            }
            LearnerSpec::SgdWclip { alpha, kappa } => vec![("alpha", alpha, true), ("kappa", kappa, true)],
            LearnerSpec::Idbd { theta_alpha, beta0 } => vec![("theta_alpha", theta_alpha, false), ("beta0", beta0, false)],
            LearnerSpec::IdbdWd { theta_alpha, beta0, lambda } => vec![
                ("theta_alpha", theta_alpha, false),
                ("beta0", beta0, false),
                ("lambda", lambda, false),
            ],
            LearnerSpec::Fade { alpha, theta_lambda, gamma0, .. } | LearnerSpec::FadeAdam { alpha, theta_lambda, gamma0, .. } => vec![
                ("alpha", alpha, true),
                ("theta_lambda", theta_lambda, false),
                ("gamma0", gamma0, false),
            ],
            LearnerSpec::FadeIdbd { theta_alpha, theta_lambda, beta0, gamma0, .. }
            | LearnerSpec::Coupled { theta_alpha, theta_lambda, beta0, gamma0, .. } => vec![
                ("theta_alpha", theta_alpha, false),
                ("theta_lambda", theta_lambda, false),
                ("beta0", beta0, false),
                ("gamma0", gamma0, false),
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSpec {
    pub name: String,
    /// Display label; defaults to `name`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
    pub steps: u64,
    #[serde(default)]
    pub seed: u64,
    /// Number of seeds: `seed, seed + 1, ...`.
    #[serde(default = "one")]
    pub seeds: u64,
    /// Steps per recorded point; defaults by task.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metric_window: Option<u64>,
    /// The summary averages only the final `summary_last` steps; defaults by task (all steps if unset).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub summary_last: Option<u64>,
    pub task: TaskSpec,
    pub learner: LearnerSpec,
}

fn one() -> u64 {
    1
}

impl RunSpec {
    pub fn from_toml_str(s: &str) -> Result<Self, HarnessError> {
        let value: toml::Value = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
        Self::from_value(value)
    }

    pub fn from_value(value: toml::Value) -> Result<Self, HarnessError> {
        let spec: RunSpec = value.try_into().map_err(|e: toml::de::Error| HarnessError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_value(&self) -> toml::Value {
        toml::Value::try_from(self).expect("run specs serialize")
    }

    pub fn label(&self) -> &str {
        self.label.as_deref().unwrap_or(&self.name)
    }

    pub fn window(&self) -> u64 {
        self.metric_window.unwrap_or_else(|| self.task.default_window())
    }

    pub fn summary_region(&self) -> Option<u64> {
        self.summary_last.or_else(|| self.task.default_summary_last())
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Config(format!("{}: {m}", self.name)));
        if self.name.is_empty() || self.name.contains(['/', '\\']) {
            return bad("name must be non-empty and contain no path separators".into());
        }
        if self.seeds == 0 {
            return bad("seeds must be at least 1".into());
        }
        if self.window() == 0 {
            return bad("metric_window must be positive".into());
        }
        if self.summary_last == Some(0) {
            return bad("summary_last must be positive".into());
        }
        if let TaskSpec::LinearTracking { noise_std } = self.task {
            if !(noise_std.is_finite() && noise_std >= 0.0) {
                return bad(format!("noise_std must be finite and non-negative, got {noise_std}"));
            }
        }
        if let TaskSpec::TeacherStudent { config } = &self.task {
            if config.period == 0 || config.slow_factor == 0 || config.input_dim == 0 || config.hidden == 0 || config.outputs() == 0 {
                return bad("teacher-student sizes and periods must be positive".into());
            }
        }
        if !self.learner.supports(&self.task) {
            return bad(format!("method {} does not apply to this task", self.learner.method()));
        }
        for (name, v, positive) in self.learner.numbers() {
            if !v.is_finite() || (positive && v <= 0.0) || (!positive && name.starts_with("theta") && v < 0.0) {
                return bad(format!("{name} = {v} is out of range"));
            }
            if matches!(name, "lambda" | "weight_decay") && v < 0.0 {
                return bad(format!("{name} = {v} must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Parse `value` as a TOML value, falling back to a bare string.
pub fn parse_override_value(value: &str) -> toml::Value {
    #[derive(Deserialize)]
    struct Wrap {
        v: toml::Value,
    }
    toml::from_str::<Wrap>(&format!("v = {value}"))
        .map(|w| w.v)
        .unwrap_or_else(|_| toml::Value::String(value.to_string()))
}

/// Set `path` (dotted) in a TOML table, creating intermediate tables.
pub fn set_path(root: &mut toml::Value, path: &str, value: toml::Value) -> Result<(), HarnessError> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(HarnessError::Config(format!("bad key path {path:?}")));
    }
    for (i, part) in parts.iter().enumerate() {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| HarnessError::Config(format!("{path}: {} is not a table", parts[..i].join("."))))?;
        if i + 1 == parts.len() {
            table.insert((*part).to_string(), value);
            return Ok(());
        }
        cur = table
            .entry((*part).to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    unreachable!()
}

/// Apply `key=value` overrides.
pub fn apply_overrides(root: &mut toml::Value, overrides: &[String]) -> Result<(), HarnessError> {
    for o in overrides {
        let (k, v) = o
            .split_once('=')
            .ok_or_else(|| HarnessError::Config(format!("override {o:?} is not key=value")))?;
        set_path(root, k.trim(), parse_override_value(v.trim()))?;
    }
    Ok(())
}

/// Parse a file holding either one run or a `[[run]]` list, applying
/// `overrides` to every run before validation.
pub fn parse_run_list(s: &str, overrides: &[String]) -> Result<Vec<RunSpec>, HarnessError> {
    let mut root: toml::Value = toml::from_str(s).map_err(|e| HarnessError::Config(e.to_string()))?;
    let runs = match root.as_table_mut().and_then(|t| t.remove("run")) {
        Some(toml::Value::Array(list)) => {
            if let Some(extra) = root.as_table().and_then(|t| t.keys().next()) {
                return Err(HarnessError::Config(format!("unexpected top-level key {extra:?} next to [[run]]")));
            }
            list
        }
        Some(_) => return Err(HarnessError::Config("`run` must be an array of tables".into())),
        None => vec![root],
    };
    if runs.is_empty() {
        return Err(HarnessError::Config("no runs defined".into()));
    }
    let mut names = std::collections::BTreeSet::new();
    runs.into_iter()
        .map(|mut v| {
            apply_overrides(&mut v, overrides)?;
            let spec = RunSpec::from_value(v)?;
            if !names.insert(spec.name.clone()) {
                return Err(HarnessError::Config(format!("duplicate run name {:?}", spec.name)));
            }
            Ok(spec)
        })
        .collect()
}
