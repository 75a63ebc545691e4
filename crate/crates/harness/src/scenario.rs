//! Benchmark scenario files.
//!
//! ```json
//! {
//!   "name": "reference",
//!   "space": "builtin:reference",
//!   "jobs": ["reference"],
//!   "task": {"beta": 0.5, "budget": 30,
//!            "constraints": [{"metric": "runtime", "factor": 2.0}],
//!            "resource_function": {"c": 0.25, "fixed": {"spark.executor.cores": 2}}},
//!   "toggles": {"safety": [true, false]},
//!   "seeds": [1, 2, 3]
//! }
//! ```
//!
//! `space` is `builtin:reference`, `builtin:families`, a path relative to
//! the scenario file, or an inline space document. A job is a family name
//! or a full [`SyntheticJobSpec`].

use std::path::Path;

use otune_core::engine::{ResourceFunctionSpec, SubspaceMode};
use otune_core::space::{Configuration, ConfigurationSpace};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::families::{family, family_space, reference_job, reference_space};
use crate::oracle::{Bound, GridOptions};
use crate::simulator::{simulate_noiseless, SyntheticJobSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum JobEntry {
    Named(String),
    Spec(SyntheticJobSpec),
}

impl JobEntry {
    fn resolve(&self) -> Result<SyntheticJobSpec> {
        match self {
            JobEntry::Spec(s) => Ok(s.clone()),
            JobEntry::Named(n) if n == "reference" => Ok(reference_job()),
            JobEntry::Named(n) => family(n).ok_or_else(|| HarnessError::Scenario(format!("unknown job family {n}"))),
        }
    }
}

/// `metric ≤ max`, or `metric ≤ factor ×` its noise-free value at the
/// space's default configuration. With neither, the engine's default
/// (twice the first successful run) applies.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConstraint {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioTask {
    pub beta: f64,
    pub budget: u64,
    #[serde(default)]
    pub constraints: Vec<ScenarioConstraint>,
    pub resource_function: ResourceFunctionSpec,
    /// Let the engine stop before the budget is used up.
    #[serde(default = "on")]
    pub early_stopping: bool,
}

fn on() -> bool {
    true
}

fn yes() -> Vec<bool> {
    vec![true]
}

fn no() -> Vec<bool> {
    vec![false]
}

fn adaptive() -> Vec<SubspaceMode> {
    vec![SubspaceMode::Adaptive]
}

/// Values tried for each ablation switch; runs cover the cartesian product.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Toggles {
    #[serde(default = "yes")]
    pub safety: Vec<bool>,
    #[serde(default = "adaptive")]
    pub subspace: Vec<SubspaceMode>,
    #[serde(default = "yes")]
    pub agd: Vec<bool>,
    #[serde(default = "no")]
    pub meta: Vec<bool>,
}

impl Default for Toggles {
    fn default() -> Self {
        Toggles { safety: yes(), subspace: adaptive(), agd: yes(), meta: no() }
    }
}

/// One point of the toggle product.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToggleSet {
    pub safety: bool,
    pub subspace: SubspaceMode,
    pub agd: bool,
    pub meta: bool,
}

impl Default for ToggleSet {
    fn default() -> Self {
        ToggleSet { safety: true, subspace: SubspaceMode::Adaptive, agd: true, meta: false }
    }
}

impl Toggles {
    pub fn product(&self) -> Vec<ToggleSet> {
        let mut out = Vec::new();
        for &safety in &self.safety {
            for &subspace in &self.subspace {
                for &agd in &self.agd {
                    for &meta in &self.meta {
                        out.push(ToggleSet { safety, subspace, agd, meta });
                    }
                }
            }
        }
        out
    }
}

fn default_history() -> usize {
    24
}

/// Archived tasks for meta-learning runs: each job contributes `history`
/// low-discrepancy evaluations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RepositorySpec {
    pub jobs: Vec<JobEntry>,
    #[serde(default = "default_history")]
    pub history: usize,
}

fn default_name() -> String {
    "scenario".into()
}

fn default_threshold() -> f64 {
    0.10
}

/// The scenario document as written on disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default = "default_name")]
    pub name: String,
    pub space: serde_json::Value,
    pub jobs: Vec<JobEntry>,
    pub task: ScenarioTask,
    #[serde(default)]
    pub toggles: Toggles,
    pub seeds: Vec<u64>,
    /// Without it, meta runs use the scenario's other jobs as the archive.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub repository: Option<RepositorySpec>,
    /// Relative gap counted as "reached" for iterations-to-threshold.
    #[serde(default = "default_threshold")]
    pub threshold: f64,
    /// Oracle discretization.
    #[serde(default)]
    pub grid: GridOptions,
}

/// A validated scenario with its space and jobs resolved.
#[derive(Clone, Debug, PartialEq)]
pub struct BenchmarkScenario {
    pub name: String,
    pub space: ConfigurationSpace,
    pub jobs: Vec<SyntheticJobSpec>,
    pub task: ScenarioTask,
    pub toggles: Toggles,
    pub seeds: Vec<u64>,
    pub repository: Option<(Vec<SyntheticJobSpec>, usize)>,
    pub threshold: f64,
    pub grid: GridOptions,
}

impl BenchmarkScenario {
    /// A scenario with default toggles, one seed and no repository.
    pub fn new(name: &str, space: ConfigurationSpace, jobs: Vec<SyntheticJobSpec>, task: ScenarioTask) -> Self {
        BenchmarkScenario {
            name: name.into(),
            space,
            jobs,
            task,
            toggles: Toggles::default(),
            seeds: vec![0],
            repository: None,
            threshold: default_threshold(),
            grid: GridOptions::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text, path.parent())
    }

    /// Parses a scenario; relative space paths resolve against `base`.
    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| HarnessError::Scenario(e.to_string()))?;
        let space = match &file.space {
            serde_json::Value::String(s) if s == "builtin:reference" => reference_space(),
            serde_json::Value::String(s) if s == "builtin:families" => family_space(),
            serde_json::Value::String(s) => {
                let p = Path::new(s);
                let full = match base {
                    Some(b) if p.is_relative() => b.join(p),
                    _ => p.to_path_buf(),
                };
                ConfigurationSpace::load(&full)?
            }
            doc => ConfigurationSpace::from_json(&doc.to_string())?,
        };
        let jobs = file.jobs.iter().map(JobEntry::resolve).collect::<Result<Vec<_>>>()?;
        let repository = match &file.repository {
            Some(r) => Some((r.jobs.iter().map(JobEntry::resolve).collect::<Result<Vec<_>>>()?, r.history)),
            None => None,
        };
        let s = BenchmarkScenario {
            name: file.name,
            space,
            jobs,
            task: file.task,
            toggles: file.toggles,
            seeds: file.seeds,
            repository,
            threshold: file.threshold,
            grid: file.grid,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(HarnessError::Scenario(m.into()));
        if self.jobs.is_empty() {
            return bad("jobs: at least one job is required");
        }
        if self.seeds.is_empty() {
            return bad("seeds: at least one seed is required");
        }
        if !(0.0..=1.0).contains(&self.task.beta) {
            return bad("task.beta: outside [0,1]");
        }
        if self.task.budget < 1 {
            return bad("task.budget: must be at least 1");
        }
        if !(self.threshold >= 0.0) {
            return bad("threshold: must be non-negative");
        }
        for c in &self.task.constraints {
            if c.max.is_some() && c.factor.is_some() {
                return bad("task.constraints: give either max or factor");
            }
            if c.max.or(c.factor).is_some_and(|v| !(v > 0.0 && v.is_finite())) {
                return bad("task.constraints: max and factor must be positive");
            }
        }
        let t = &self.toggles;
        if t.safety.is_empty() || t.subspace.is_empty() || t.agd.is_empty() || t.meta.is_empty() {
            return bad("toggles: every switch needs at least one value");
        }
        self.task.resource_function.validate()?;
        for j in self.jobs.iter().chain(self.repository.iter().flat_map(|r| &r.0)) {
            j.validate(&self.space)?;
        }
        if t.meta.contains(&true) && self.repository.is_none() && self.jobs.len() < 2 {
            return bad("meta runs need a repository or at least two jobs");
        }
        Ok(())
    }

    /// Constraint bounds for `job`; `None` where the engine default applies.
    pub fn bounds(&self, job: &SyntheticJobSpec) -> Result<Vec<(String, Option<f64>)>> {
        let default: Configuration = self.space.default_configuration();
        let base = simulate_noiseless(job, &default, 0, &self.task.resource_function)?;
        self.task
            .constraints
            .iter()
            .map(|c| {
                let max = match (c.max, c.factor) {
                    (Some(m), _) => Some(m),
                    (None, Some(f)) => {
                        let v = base.metric(&c.metric).ok_or_else(|| {
                            HarnessError::Scenario(format!("the simulator does not report {}", c.metric))
                        })?;
                        if !v.is_finite() {
                            return Err(HarnessError::Scenario(format!(
                                "{} is not finite at the default configuration",
                                c.metric
                            )));
                        }
                        Some(f * v)
                    }
                    (None, None) => None,
                };
                Ok((c.metric.clone(), max))
            })
            .collect()
    }

    /// Fully resolved bounds (the oracle needs numbers).
    pub fn oracle_bounds(&self, job: &SyntheticJobSpec) -> Result<Vec<Bound>> {
        Ok(self
            .bounds(job)?
            .into_iter()
            .filter_map(|(metric, max)| max.map(|max| Bound { metric, max }))
            .collect())
    }
}
