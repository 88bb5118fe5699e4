//! Experiment descriptions.
//!
//! Times are in harness seconds. A task's compute time on a worker is
//! `reference_task_seconds / (speed_factor * time_scale)`, so a scenario
//! can state the workload in the units of the original deployment and
//! still run at desk scale.

use std::path::Path;

use serde::{Deserialize, Serialize};

/// A group of identical workers that are started by the same batch system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolSpec {
    #[serde(default)]
    pub name: String,
    pub count: usize,
    pub speed_factor: f64,
    /// Earliest time a worker of this pool starts.
    #[serde(default)]
    pub join_time: f64,
    /// Each worker starts after a further uniform delay in `[0, jitter]`.
    #[serde(default)]
    pub batch_policy_jitter: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workload {
    pub task_count: usize,
    pub reference_task_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    WorkerKill,
    WorkerRestart,
    CoordinatorKill,
    CoordinatorRestart,
    Partition,
    Heal,
    /// Multiplies the compute time of later tasks, as when a batch system
    /// shares one CPU between two jobs.
    Slowdown {
        factor: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trigger {
    /// At this scenario time.
    At(f64),
    /// When this fraction of the tasks has completed.
    AtProgress(f64),
    /// This long after the previous fault in the list fired.
    After(f64),
}

/// Which workers a worker fault applies to. `Fraction` picks, with the
/// scenario's random generator, that share of the workers the fault can
/// affect: running ones for a kill, killed ones for a restart, and so on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    All,
    Pool(usize),
    Worker(String),
    Fraction(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaultEvent {
    pub at: Trigger,
    pub kind: FaultKind,
    #[serde(default = "default_target")]
    pub target: Target,
}

fn default_target() -> Target {
    Target::All
}

fn default_time_scale() -> f64 {
    1.0
}
fn default_alive_period() -> f64 {
    0.5
}
fn default_max_attempts() -> u32 {
    5
}
fn default_exec_jitter() -> f64 {
    0.03
}
fn default_tick() -> f64 {
    0.1
}
fn default_cap() -> f64 {
    86_400.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub pools: Vec<PoolSpec>,
    pub workload: Workload,
    #[serde(default)]
    pub faults: Vec<FaultEvent>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_time_scale")]
    pub time_scale: f64,
    #[serde(default = "default_alive_period")]
    pub alive_period_s: f64,
    /// Defaults to three alive periods.
    #[serde(default)]
    pub alive_timeout_s: Option<f64>,
    #[serde(default = "default_max_attempts")]
    pub max_attempts: u32,
    /// Each execution is stretched by a uniform factor in `[1, 1 + jitter]`.
    #[serde(default = "default_exec_jitter")]
    pub exec_jitter: f64,
    /// Sampling period of the utilization series.
    #[serde(default = "default_tick")]
    pub tick_s: f64,
    /// Scenario time after which the run is abandoned.
    #[serde(default = "default_cap")]
    pub cap_s: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum ScenarioError {
    #[error("invalid scenario: {0}")]
    Invalid(String),
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("scenario parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown built-in scenario {0:?}")]
    UnknownBuiltin(String),
}

fn positive(x: f64) -> bool {
    x.is_finite() && x > 0.0
}

impl ScenarioSpec {
    /// A single pool of identical reference-speed workers and no faults.
    pub fn homogeneous(name: &str, workers: usize, task_count: usize, task_seconds: f64) -> Self {
        ScenarioSpec {
            name: name.to_string(),
            pools: vec![PoolSpec {
                name: "pool".into(),
                count: workers,
                speed_factor: 1.0,
                join_time: 0.0,
                batch_policy_jitter: 0.0,
            }],
            workload: Workload {
                task_count,
                reference_task_seconds: task_seconds,
            },
            faults: Vec::new(),
            seed: 0,
            time_scale: 1.0,
            alive_period_s: default_alive_period(),
            alive_timeout_s: None,
            max_attempts: default_max_attempts(),
            exec_jitter: default_exec_jitter(),
            tick_s: default_tick(),
            cap_s: default_cap(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn pool_size(&self) -> usize {
        self.pools.iter().map(|p| p.count).sum()
    }

    pub fn alive_timeout_s(&self) -> f64 {
        self.alive_timeout_s.unwrap_or(3.0 * self.alive_period_s)
    }

    /// Compute time of one task on a worker of `speed_factor`, before jitter.
    pub fn task_seconds(&self, speed_factor: f64) -> f64 {
        self.workload.reference_task_seconds / (speed_factor * self.time_scale)
    }

    pub fn is_homogeneous(&self) -> bool {
        self.pools.windows(2).all(|w| w[0].speed_factor == w[1].speed_factor)
    }

    /// The same pools collapsed into one class of reference-speed workers.
    pub fn homogeneous_analogue(&self) -> Self {
        let mut s = self.clone();
        for p in &mut s.pools {
            p.speed_factor = 1.0;
        }
        s
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: String| Err(ScenarioError::Invalid(m));
        if self.pools.is_empty() || self.pool_size() == 0 {
            return bad("at least one worker is required".into());
        }
        for (i, p) in self.pools.iter().enumerate() {
            if !positive(p.speed_factor) {
                return bad(format!("pool {i}: speed_factor must be positive"));
            }
            if !(p.join_time.is_finite() && p.join_time >= 0.0) {
                return bad(format!("pool {i}: join_time must be non-negative"));
            }
            if !(p.batch_policy_jitter.is_finite() && p.batch_policy_jitter >= 0.0) {
                return bad(format!("pool {i}: batch_policy_jitter must be non-negative"));
            }
        }
        if !positive(self.workload.reference_task_seconds) {
            return bad("reference_task_seconds must be positive".into());
        }
        for (name, v) in [
            ("time_scale", self.time_scale),
            ("alive_period_s", self.alive_period_s),
            ("alive_timeout_s", self.alive_timeout_s()),
            ("tick_s", self.tick_s),
            ("cap_s", self.cap_s),
        ] {
            if !positive(v) {
                return bad(format!("{name} must be positive"));
            }
        }
        if self.alive_timeout_s() < self.alive_period_s {
            return bad("alive_timeout_s must not be shorter than alive_period_s".into());
        }
        if self.max_attempts == 0 {
            return bad("max_attempts must be positive".into());
        }
        if !(self.exec_jitter.is_finite() && self.exec_jitter >= 0.0) {
            return bad("exec_jitter must be non-negative".into());
        }
        let mut coordinator_down = false;
        for (i, f) in self.faults.iter().enumerate() {
            match f.at {
                Trigger::At(t) | Trigger::After(t) if !(t.is_finite() && t >= 0.0) => {
                    return bad(format!("fault {i}: time must be non-negative"))
                }
                Trigger::AtProgress(p) if !(0.0..=1.0).contains(&p) => {
                    return bad(format!("fault {i}: progress must lie in [0, 1]"))
                }
                Trigger::After(_) if i == 0 => return bad("fault 0 cannot be relative to a previous fault".into()),
                _ => {}
            }
            match f.kind {
                FaultKind::CoordinatorKill if coordinator_down => {
                    return bad(format!("fault {i}: coordinator is already down"))
                }
                FaultKind::CoordinatorKill => coordinator_down = true,
                FaultKind::CoordinatorRestart if !coordinator_down => {
                    return bad(format!("fault {i}: CoordinatorRestart must follow a CoordinatorKill"))
                }
                FaultKind::CoordinatorRestart => coordinator_down = false,
                FaultKind::Slowdown { factor } if !positive(factor) => {
                    return bad(format!("fault {i}: slowdown factor must be positive"))
                }
                _ => {}
            }
            match &f.target {
                Target::Pool(p) if *p >= self.pools.len() => return bad(format!("fault {i}: no pool {p}")),
                Target::Fraction(x) if !(0.0..=1.0).contains(x) => {
                    return bad(format!("fault {i}: fraction must lie in [0, 1]"))
                }
                _ => {}
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let s: ScenarioSpec = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }
}

/// The five shipped deployments, smallest pool first.
pub const BUILTIN: [(&str, &str); 5] = [
    ("wisc97", include_str!("../scenarios/wisc97.json")),
    ("wl113", include_str!("../scenarios/wl113.json")),
    ("g146", include_str!("../scenarios/g146.json")),
    ("wlg270", include_str!("../scenarios/wlg270.json")),
    ("wlg451", include_str!("../scenarios/wlg451.json")),
];

pub fn builtin(name: &str) -> Result<ScenarioSpec, ScenarioError> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| ScenarioError::UnknownBuiltin(name.to_string()))?;
    ScenarioSpec::from_json(text)
}

pub fn builtins() -> Vec<ScenarioSpec> {
    BUILTIN
        .iter()
        .map(|(n, _)| builtin(n).expect("shipped scenarios are valid"))
        .collect()
}
