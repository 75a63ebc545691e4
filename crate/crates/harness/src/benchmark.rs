//! Runs the tuning loop against the simulator and scores it.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use otune_core::engine::{
    derive_seed, ConstraintDef, MetaContext, SubspaceMode, TaskDefinition, Tuner, TunerOptions,
};
use otune_core::history::{objective, Source};
use otune_core::meta::{MetaFeatureVector, MetaRepository, TaskRecord};
use otune_core::space::{sample_low_discrepancy, Configuration, ConfigurationSpace};
use otune_core::agd::AgdConfig;
use otune_core::acquisition::SafetyConfig;
use otune_core::ENGINE_VERSION;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::oracle::{brute_force_optimum, grid, OracleResult};
use crate::scenario::{BenchmarkScenario, ToggleSet};
use crate::simulator::{simulate_execution, simulate_noiseless, SyntheticJobSpec};

/// One tuning iteration as seen by the harness.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub iteration: u64,
    pub source: Source,
    pub configuration: Configuration,
    /// Observed values; `None` for failed runs.
    pub runtime: Option<f64>,
    pub objective: Option<f64>,
    pub resource: f64,
    pub failed: bool,
    /// The run met every scenario bound.
    pub safe: bool,
    /// Noise-free objective of this configuration at the nominal data size.
    pub true_objective: Option<f64>,
    /// True objective of the best safe configuration observed so far, with
    /// observations compared after rescaling to the nominal data size.
    pub incumbent: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub job: String,
    pub seed: u64,
    pub toggles: ToggleSet,
    /// Fraction of tuning suggestions (replays of the incumbent excluded)
    /// that met every bound.
    pub safe_ratio: f64,
    pub final_objective: Option<f64>,
    /// `(final − optimum) / optimum`.
    pub final_gap: Option<f64>,
    /// First iteration whose incumbent is within the scenario threshold.
    pub iterations_to_threshold: Option<u64>,
    /// Iteration after which the engine stopped exploring, if it did.
    pub stopped_at: Option<u64>,
    pub trajectory: Vec<Step>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSummary {
    pub job: String,
    pub configuration: Configuration,
    pub objective: f64,
    pub feasible: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub job: String,
    pub toggles: ToggleSet,
    pub runs: usize,
    pub safe_ratio: f64,
    pub mean_gap: Option<f64>,
    /// Runs that reached the threshold.
    pub reached: usize,
    /// Mean iterations-to-threshold over the runs that reached it.
    pub mean_iterations: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario: String,
    pub engine_version: String,
    pub threshold: f64,
    pub oracle: Vec<OracleSummary>,
    pub summary: Vec<SummaryRow>,
    pub runs: Vec<RunReport>,
}

impl BenchmarkReport {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("reports serialize");
        s.push('\n');
        s
    }

    /// Aligned plain-text summary.
    pub fn table(&self) -> String {
        let header = ["job", "safety", "subspace", "agd", "meta", "runs", "safe%", "gap%", "reached", "iters"];
        let mut rows: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
        for r in &self.summary {
            rows.push(vec![
                r.job.clone(),
                on_off(r.toggles.safety),
                subspace_label(r.toggles.subspace),
                on_off(r.toggles.agd),
                on_off(r.toggles.meta),
                r.runs.to_string(),
                format!("{:.1}", 100.0 * r.safe_ratio),
                r.mean_gap.map_or("-".into(), |g| format!("{:.2}", 100.0 * g)),
                format!("{}/{}", r.reached, r.runs),
                r.mean_iterations.map_or("-".into(), |m| format!("{m:.1}")),
            ]);
        }
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).max().unwrap_or(0))
            .collect();
        let mut out = String::new();
        for (i, row) in rows.iter().enumerate() {
            let cells: Vec<String> = row
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(out, "{}", cells.join("  ").trim_end());
            if i == 0 {
                let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
                let _ = writeln!(out, "{}", "-".repeat(total));
            }
        }
        out
    }
}

fn on_off(b: bool) -> String {
    if b { "on" } else { "off" }.into()
}

pub fn subspace_label(m: SubspaceMode) -> String {
    match m {
        SubspaceMode::Adaptive => "adaptive".into(),
        SubspaceMode::Full => "full".into(),
        SubspaceMode::Fixed(k) => format!("fixed({k})"),
    }
}

/// Engine options for a toggle set.
pub fn tuner_options(t: &ToggleSet, early_stopping: bool) -> TunerOptions {
    TunerOptions {
        safety: t.safety.then(SafetyConfig::default),
        agd: t.agd.then(AgdConfig::default),
        subspace: t.subspace,
        ensemble: t.meta,
        early_stopping,
        ..TunerOptions::default()
    }
}

/// Archives `history` low-discrepancy evaluations of `job` as a task record.
pub fn archive_job(
    task_id: &str,
    job: &SyntheticJobSpec,
    space: &ConfigurationSpace,
    scenario: &BenchmarkScenario,
    history: usize,
) -> Result<TaskRecord> {
    let def = task_definition(scenario, task_id, job, true, job.seed)?;
    let mut tuner = Tuner::new(def, space.clone(), TunerOptions::default())?;
    let configs = sample_low_discrepancy(space, history.max(1), derive_seed(job.seed, 0x7265706f, 0))?;
    for c in &configs {
        let iteration = tuner.next_iteration();
        let run = simulate_execution(job, c, iteration, &scenario.task.resource_function)?;
        tuner.observe_imported(c, run.measurement())?;
    }
    Ok(TaskRecord::new(task_id, job.meta_features(), space.clone(), tuner.history().to_vec(), job.seed)?)
}

fn task_definition(
    scenario: &BenchmarkScenario,
    task_id: &str,
    job: &SyntheticJobSpec,
    constrained: bool,
    seed: u64,
) -> Result<TaskDefinition> {
    let constraints = if constrained {
        scenario
            .bounds(job)?
            .into_iter()
            .map(|(metric, max)| ConstraintDef { metric, max })
            .collect()
    } else {
        Vec::new()
    };
    Ok(TaskDefinition {
        task_id: task_id.into(),
        space_ref: scenario.name.clone(),
        beta: scenario.task.beta,
        constraints,
        budget: scenario.task.budget,
        seed,
        resource_function: scenario.task.resource_function.clone(),
    })
}

fn job_label(job: &SyntheticJobSpec, index: usize, all: &[SyntheticJobSpec]) -> String {
    if all.iter().filter(|j| j.family == job.family).count() > 1 {
        format!("{}#{index}", job.family)
    } else {
        job.family.clone()
    }
}

/// Archive used by meta runs on job `index`.
fn repository_for(scenario: &BenchmarkScenario, index: usize) -> Result<MetaRepository> {
    let (jobs, history): (Vec<(usize, &SyntheticJobSpec)>, usize) = match &scenario.repository {
        Some((jobs, h)) => (jobs.iter().enumerate().collect(), *h),
        None => (scenario.jobs.iter().enumerate().filter(|(i, _)| *i != index).collect(), 24),
    };
    let records = jobs
        .par_iter()
        .map(|(i, j)| archive_job(&format!("archive-{i}-{}", j.family), j, &scenario.space, scenario, history))
        .collect::<Result<Vec<_>>>()?;
    let mut repo = MetaRepository::new(records);
    repo.train(64, 0x6d657461)?;
    Ok(repo)
}

/// Inputs for one tuning run.
pub struct RunInput<'a> {
    pub scenario: &'a BenchmarkScenario,
    pub job: &'a SyntheticJobSpec,
    pub label: String,
    pub toggles: ToggleSet,
    pub seed: u64,
    pub oracle: &'a OracleResult,
    pub repository: Option<&'a MetaRepository>,
}

/// Tunes one job for the scenario budget. After the engine stops, the
/// remaining iterations replay its incumbent as they would in production.
pub fn run_task(input: &RunInput<'_>) -> Result<RunReport> {
    let scenario = input.scenario;
    let t = input.toggles;
    let job = input.job.reseeded(input.seed);
    let resource = &scenario.task.resource_function;
    let bounds = scenario.bounds(input.job)?;
    let def = task_definition(scenario, &format!("bench-{}", input.label), input.job, t.safety, input.seed)?;
    let mut tuner = Tuner::new(def, scenario.space.clone(), tuner_options(&t, scenario.task.early_stopping))?;
    let features: MetaFeatureVector = job.meta_features();
    let meta = match (t.meta, input.repository) {
        (true, Some(repo)) => Some(MetaContext { repo, features: &features }),
        _ => None,
    };

    let f_star = input.oracle.objective;
    let mut true_cache: BTreeMap<String, Option<f64>> = BTreeMap::new();
    let mut true_objective = |c: &Configuration| -> Result<Option<f64>> {
        let key = serde_json::to_string(c).expect("configurations serialize");
        if let Some(v) = true_cache.get(&key) {
            return Ok(*v);
        }
        let run = simulate_noiseless(input.job, c, 0, resource)?;
        let v = if run.failed { None } else { Some(objective(run.runtime, run.resource, scenario.task.beta)?) };
        true_cache.insert(key, v);
        Ok(v)
    };

    let mut steps: Vec<Step> = Vec::with_capacity(scenario.task.budget as usize);
    let mut best: Option<(f64, Option<f64>)> = None;
    let mut stopped_at = None;
    let mut first_ok: Option<crate::simulator::ExecutionResult> = None;
    for _ in 0..scenario.task.budget {
        let iteration = tuner.next_iteration();
        let context = otune_core::history::Context::data_size(job.data_size_at(iteration));
        let s = tuner.suggest(&context, meta)?;
        let run = simulate_execution(&job, &s.configuration, iteration, resource)?;
        let obs = tuner.observe(run.measurement())?;
        if stopped_at.is_none() && tuner.status() == otune_core::engine::TaskStatus::Stopped {
            stopped_at = Some(iteration);
        }

        // bounds left to the engine default are judged by the default rule
        let thresholds = tuner.thresholds();
        let safe = !run.failed
            && bounds.iter().all(|(metric, max)| {
                let engine_max = thresholds.iter().find(|(m, _)| m == metric).and_then(|(_, t)| *t);
                let default_max = || first_ok.as_ref().and_then(|r| r.metric(metric)).map(|v| 2.0 * v);
                match (max.or(engine_max).or_else(default_max), run.metric(metric)) {
                    (Some(m), Some(v)) => v <= m,
                    (None, _) => true,
                    _ => false,
                }
            });
        if first_ok.is_none() && !run.failed {
            first_ok = Some(run.clone());
        }
        let truth = true_objective(&s.configuration)?;
        // Observations are ranked at the nominal data size; otherwise a run on
        // a small input would look better than it is.
        let scale = (job.data_size / context.data_size.unwrap_or(job.data_size)).powf(job.alpha * scenario.task.beta);
        let adjusted = obs.objective * scale;
        if safe && obs.is_usable() && best.is_none_or(|(b, _)| adjusted < b) {
            best = Some((adjusted, truth));
        }
        steps.push(Step {
            iteration,
            source: s.source,
            configuration: s.configuration,
            runtime: (!run.failed).then_some(run.runtime),
            objective: obs.is_usable().then_some(obs.objective),
            resource: run.resource,
            failed: run.failed,
            safe,
            true_objective: truth,
            incumbent: best.and_then(|b| b.1),
        });
    }

    let tuning: Vec<&Step> = steps.iter().filter(|s| s.source != Source::Best).collect();
    let safe_ratio = tuning.iter().filter(|s| s.safe).count() as f64 / tuning.len().max(1) as f64;
    let final_objective = steps.last().and_then(|s| s.incumbent);
    let target = f_star * (1.0 + scenario.threshold);
    let iterations_to_threshold = steps
        .iter()
        .position(|s| s.incumbent.is_some_and(|v| v <= target))
        .map(|i| i as u64 + 1);
    Ok(RunReport {
        job: input.label.clone(),
        seed: input.seed,
        toggles: t,
        safe_ratio,
        final_objective,
        final_gap: final_objective.map(|v| (v - f_star) / f_star),
        iterations_to_threshold,
        stopped_at,
        trajectory: steps,
    })
}

/// Oracle for one job of the scenario at the nominal data size.
pub fn job_oracle(scenario: &BenchmarkScenario, job: &SyntheticJobSpec) -> Result<OracleResult> {
    let cells = grid(&scenario.space, &scenario.grid)?;
    brute_force_optimum(job, &cells, scenario.task.beta, &scenario.oracle_bounds(job)?, 0, &scenario.task.resource_function)
}

/// Every job × toggle set × seed, in that nesting order.
pub fn run_benchmark(scenario: &BenchmarkScenario) -> Result<BenchmarkReport> {
    scenario.validate()?;
    let labels: Vec<String> = scenario
        .jobs
        .iter()
        .enumerate()
        .map(|(i, j)| job_label(j, i, &scenario.jobs))
        .collect();
    let oracles = scenario
        .jobs
        .iter()
        .map(|j| job_oracle(scenario, j))
        .collect::<Result<Vec<_>>>()?;
    let toggle_sets = scenario.toggles.product();
    let repos: Vec<Option<MetaRepository>> = if toggle_sets.iter().any(|t| t.meta) {
        (0..scenario.jobs.len()).map(|i| repository_for(scenario, i).map(Some)).collect::<Result<_>>()?
    } else {
        scenario.jobs.iter().map(|_| None).collect()
    };

    let mut plan = Vec::new();
    for j in 0..scenario.jobs.len() {
        for t in &toggle_sets {
            for &seed in &scenario.seeds {
                plan.push((j, *t, seed));
            }
        }
    }
    let runs = plan
        .par_iter()
        .map(|&(j, toggles, seed)| {
            run_task(&RunInput {
                scenario,
                job: &scenario.jobs[j],
                label: labels[j].clone(),
                toggles,
                seed,
                oracle: &oracles[j],
                repository: repos[j].as_ref(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut summary = Vec::new();
    for label in &labels {
        for t in &toggle_sets {
            let group: Vec<&RunReport> = runs.iter().filter(|r| &r.job == label && r.toggles == *t).collect();
            let n = group.len();
            let gaps: Vec<f64> = group.iter().filter_map(|r| r.final_gap).collect();
            let reached: Vec<f64> = group.iter().filter_map(|r| r.iterations_to_threshold.map(|v| v as f64)).collect();
            summary.push(SummaryRow {
                job: label.clone(),
                toggles: *t,
                runs: n,
                safe_ratio: group.iter().map(|r| r.safe_ratio).sum::<f64>() / n.max(1) as f64,
                mean_gap: (!gaps.is_empty()).then(|| gaps.iter().sum::<f64>() / gaps.len() as f64),
                reached: reached.len(),
                mean_iterations: (!reached.is_empty()).then(|| reached.iter().sum::<f64>() / reached.len() as f64),
            });
        }
    }

    Ok(BenchmarkReport {
        scenario: scenario.name.clone(),
        engine_version: ENGINE_VERSION.into(),
        threshold: scenario.threshold,
        oracle: labels
            .iter()
            .zip(&oracles)
            .map(|(l, o)| OracleSummary {
                job: l.clone(),
                configuration: o.best.clone(),
                objective: o.objective,
                feasible: o.feasible,
            })
            .collect(),
        summary,
        runs,
    })
}
