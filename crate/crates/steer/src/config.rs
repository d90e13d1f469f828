//! Experiment configuration files.
//!
//! A config is a TOML document with the blocks `task`, `schedule`,
//! `objective`, `guidance`, `search` and an optional `output`. Unknown keys
//! are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use steer_core::discrete::MAX_TABLE_SIZE;
use steer_core::guidance::GuidanceConfig;
use steer_core::ScheduleKind;

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskConfig,
    pub schedule: ScheduleConfig,
    pub objective: ObjectiveConfig,
    #[serde(default)]
    pub guidance: GuidanceConfig,
    pub search: SearchConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum TaskConfig {
    /// Equal-covariance diagonal GMM in `R^dims`; component `i` has mean
    /// `offsets[i] * 1`.
    ContinuousGmm { dims: usize, weights: Vec<f64>, offsets: Vec<f64>, variance: f64 },
    /// Exact tabular masked flow over `[states]^dims`.
    DiscreteTabular { dims: usize, states: usize, data: DataConfig },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// Weight `exp(-(n - center)^2 / (2 width^2))` for `n` copies of `token`.
    CountWeighted { token: u8, center: f64, width: f64 },
    /// Log-normal random weights.
    Random { spread: f64, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleConfig {
    /// Continuous noise schedule; ignored by discrete tasks.
    #[serde(default = "default_schedule_kind")]
    pub kind: ScheduleKind,
    pub steps: usize,
}

fn default_schedule_kind() -> ScheduleKind {
    ScheduleKind::Cosine
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObjectiveConfig {
    /// Continuous: number of coordinates above `epsilon`, scored as
    /// `-(target - count)^2 / (2 sigma^2)`. `temperature` sets the sigmoid
    /// relaxation used by gradient guidance.
    CountAbove {
        epsilon: f64,
        target: f64,
        #[serde(default = "one")]
        sigma: f64,
        #[serde(default = "default_temperature")]
        temperature: f64,
    },
    /// Discrete: multiplicity of `token`, Gaussian-scored like `count-above`.
    TokenCount {
        token: u8,
        target: f64,
        #[serde(default = "one")]
        sigma: f64,
    },
    /// Discrete: `log p(y | x)` of a random pairwise log-sigmoid classifier.
    Classifier { bias: f64, scale: f64, seed: u64 },
    /// Discrete: `sum_d w[d, x_d]` with `w ~ scale * N(0, 1)`; mainly for
    /// gradient checks, where Taylor ratios are exact.
    Linear { scale: f64, seed: u64 },
}

fn one() -> f64 {
    1.0
}

fn default_temperature() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchConfig {
    /// Active-set size `A`.
    pub active: usize,
    /// Branch-out `K`.
    pub branch: usize,
    /// Number of seeds per run; seeds are `first_seed..first_seed + seeds`.
    pub seeds: usize,
    #[serde(default)]
    pub first_seed: u64,
    /// Worker threads; absent means all cores, 1 means serial.
    #[serde(default)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// Task id written to the CSV; derived from the task and objective when
    /// absent.
    #[serde(default)]
    pub name: Option<String>,
    /// CSV file, relative to the output root.
    #[serde(default = "default_csv")]
    pub csv: String,
    /// Write one JSON trace per run under `traces/`.
    #[serde(default)]
    pub traces: bool,
}

fn default_csv() -> String {
    "results.csv".into()
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { name: None, csv: default_csv(), traces: false }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| HarnessError::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            HarnessError::Config(m) => HarnessError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configs serialize")
    }

    /// Task id for result rows.
    pub fn task_id(&self) -> String {
        if let Some(name) = &self.output.name {
            return name.clone();
        }
        let task = match self.task {
            TaskConfig::ContinuousGmm { .. } => "continuous-gmm",
            TaskConfig::DiscreteTabular { .. } => "discrete-tabular",
        };
        let objective = match self.objective {
            ObjectiveConfig::CountAbove { .. } => "count-above",
            ObjectiveConfig::TokenCount { .. } => "token-count",
            ObjectiveConfig::Classifier { .. } => "classifier",
            ObjectiveConfig::Linear { .. } => "linear",
        };
        format!("{task}/{objective}")
    }

    /// Cross-field checks; messages start with the field path.
    pub fn validate(&self) -> Result<()> {
        let bad = |path: &str, msg: &str| Err(HarnessError::config(format!("{path}: {msg}")));
        match &self.task {
            TaskConfig::ContinuousGmm { dims, weights, offsets, variance } => {
                if *dims == 0 {
                    return bad("task.dims", "must be >= 1");
                }
                if weights.is_empty() || weights.len() != offsets.len() {
                    return bad("task.offsets", "needs one offset per weight");
                }
                if !(*variance > 0.0) {
                    return bad("task.variance", "must be positive");
                }
                match self.objective {
                    ObjectiveConfig::CountAbove { sigma, temperature, .. } => {
                        if !(sigma > 0.0) {
                            return bad("objective.sigma", "must be positive");
                        }
                        if !(temperature > 0.0) {
                            return bad("objective.temperature", "must be positive");
                        }
                    }
                    _ => return bad("objective.kind", "continuous tasks take a count-above objective"),
                }
            }
            TaskConfig::DiscreteTabular { dims, states, data } => {
                if *dims == 0 || !(2..=255).contains(states) {
                    return bad("task", "needs dims >= 1 and 2 <= states <= 255");
                }
                let size = (*states as u128).checked_pow(*dims as u32).unwrap_or(u128::MAX);
                if size > MAX_TABLE_SIZE as u128 {
                    return bad("task", &format!("table of {states}^{dims} entries exceeds {MAX_TABLE_SIZE}"));
                }
                if let DataConfig::CountWeighted { token, width, .. } = data {
                    if *token as usize >= *states {
                        return bad("task.data.token", "must be < states");
                    }
                    if !(*width > 0.0) {
                        return bad("task.data.width", "must be positive");
                    }
                }
                match self.objective {
                    ObjectiveConfig::TokenCount { token, sigma, .. } => {
                        if token as usize >= *states {
                            return bad("objective.token", "must be < states");
                        }
                        if !(sigma > 0.0) {
                            return bad("objective.sigma", "must be positive");
                        }
                    }
                    ObjectiveConfig::Classifier { .. } | ObjectiveConfig::Linear { .. } => {}
                    ObjectiveConfig::CountAbove { .. } => {
                        return bad("objective.kind", "count-above needs a continuous task")
                    }
                }
            }
        }
        if self.schedule.steps == 0 {
            return bad("schedule.steps", "must be >= 1");
        }
        if let Err(e) = self.guidance.validate() {
            return bad("guidance", &e.to_string());
        }
        let s = &self.search;
        if s.active == 0 || s.branch == 0 {
            return bad("search", "active and branch must be >= 1");
        }
        if s.seeds == 0 {
            return bad("search.seeds", "must be >= 1");
        }
        if s.threads == Some(0) {
            return bad("search.threads", "must be >= 1");
        }
        Ok(())
    }
}
