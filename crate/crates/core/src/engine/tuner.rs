use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::task::{ResourceFunctionSpec, TaskDefinition};
use crate::acquisition::{maximize_eic, AcquisitionOptions, ConstraintModel, ConstraintSpec, SafetyConfig};
use crate::agd::{agd_step, AgdConfig, ResourceFunction};
use crate::error::{Error, Result};
use crate::history::{objective, Context, Observation, Source};
use crate::meta::{loo_rank_accuracy, MetaFeatureVector, MetaRepository, TaskRecord, WARM_START_SIZE};
use crate::space::{sample_low_discrepancy, Configuration, ConfigurationSpace, SubSpace};
use crate::subspace::{build_subspace, importance_scores, ImportanceOptions, ImportanceReport, SubSpaceState};
use crate::surrogate::{EnsembleSurrogate, FitOptions, GpSurrogate, Sample, Surrogate};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskStatus {
    Initializing,
    Running,
    Stopped,
    Restarted,
}

/// How the searched sub-space is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SubspaceMode {
    /// Grows and shrinks with the success/failure counters.
    Adaptive,
    /// Always the given number of top-ranked parameters.
    Fixed(usize),
    /// Every parameter.
    Full,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TunerOptions {
    /// `None` turns off safe-region filtering.
    pub safety: Option<SafetyConfig>,
    /// `None` turns off gradient steps.
    pub agd: Option<AgdConfig>,
    pub subspace: SubspaceMode,
    /// Stop once the best acquisition value falls below `rho·|y*|`.
    pub rho: f64,
    pub early_stopping: bool,
    pub restart_window: usize,
    pub restart_margin: f64,
    /// Importance is recomputed every this many usable observations.
    pub importance_period: usize,
    pub acquisition: AcquisitionOptions,
    pub fit: FitOptions,
    /// Use the archived-task ensemble for the objective when a repository is given.
    pub ensemble: bool,
}

impl Default for TunerOptions {
    fn default() -> Self {
        TunerOptions {
            safety: Some(SafetyConfig::default()),
            agd: Some(AgdConfig::default()),
            subspace: SubspaceMode::Adaptive,
            rho: 0.10,
            early_stopping: true,
            restart_window: 5,
            restart_margin: 0.2,
            importance_period: 5,
            acquisition: AcquisitionOptions::default(),
            fit: FitOptions::default(),
            ensemble: true,
        }
    }
}

/// Archived tasks and the current task's meta-features.
#[derive(Clone, Copy)]
pub struct MetaContext<'a> {
    pub repo: &'a MetaRepository,
    pub features: &'a MetaFeatureVector,
}

/// A configuration handed out for the next run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Suggestion {
    pub iteration: u64,
    pub configuration: Configuration,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_objective: Option<f64>,
    #[serde(default)]
    pub context: Context,
}

/// Result of one run as reported by the caller.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Measurement {
    #[serde(default, with = "crate::history::finite_or_null")]
    pub runtime: f64,
    /// Computed from the resource function when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub resource: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
    #[serde(default)]
    pub context: Context,
    /// The run crashed or was killed.
    #[serde(default)]
    pub failed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
}

impl Measurement {
    pub fn new(runtime: f64, context: Context) -> Self {
        Measurement { runtime, context, ..Default::default() }
    }

    pub fn failed(context: Context) -> Self {
        Measurement { runtime: f64::INFINITY, context, failed: true, ..Default::default() }
    }
}

/// Mixes a task seed with a stream tag and an index (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    let mut z = seed
        ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15)
        ^ index.wrapping_mul(0xd1b5_4a32_d192_ed03);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_FIT: u64 = 1;
const STREAM_ACQ: u64 = 2;
const STREAM_INIT: u64 = 3;
const STREAM_IMPORTANCE: u64 = 4;

/// State of one tuning task.
///
/// Everything except the outstanding suggestion and caches is a function of
/// the definition, the options and the observation sequence, so
/// [`Tuner::replay`] rebuilds it exactly.
#[derive(Clone, Debug)]
pub struct Tuner {
    def: TaskDefinition,
    space: ConfigurationSpace,
    options: TunerOptions,
    history: Vec<Observation>,
    status: TaskStatus,
    subspace: SubSpaceState,
    thresholds: Vec<Option<f64>>,
    /// Index into `history` where the current tuning epoch starts.
    epoch_start: usize,
    epoch: u64,
    /// Objective model of the epoch before the last restart.
    archive: Option<TaskRecord>,
    pending: Option<Suggestion>,
    importance: Option<(usize, ImportanceReport)>,
}

impl Tuner {
    pub fn new(def: TaskDefinition, space: ConfigurationSpace, options: TunerOptions) -> Result<Self> {
        def.validate()?;
        if let Some(a) = &options.agd {
            a.validate()?;
        }
        if !(options.rho >= 0.0) {
            return Err(Error::Argument("rho must be non-negative".into()));
        }
        let subspace = match options.subspace {
            SubspaceMode::Adaptive => SubSpaceState::new(space.dimension()),
            SubspaceMode::Fixed(k) => SubSpaceState::fixed(k.clamp(1, space.dimension())),
            SubspaceMode::Full => SubSpaceState::fixed(space.dimension()),
        };
        let thresholds = def.constraints.iter().map(|c| c.max).collect();
        Ok(Tuner {
            def,
            space,
            options,
            history: Vec::new(),
            status: TaskStatus::Initializing,
            subspace,
            thresholds,
            epoch_start: 0,
            epoch: 0,
            archive: None,
            pending: None,
            importance: None,
        })
    }

    /// Rebuilds a tuner by applying logged observations in order.
    pub fn replay(
        def: TaskDefinition,
        space: ConfigurationSpace,
        options: TunerOptions,
        observations: impl IntoIterator<Item = Observation>,
    ) -> Result<Self> {
        let mut t = Tuner::new(def, space, options)?;
        for o in observations {
            t.apply(o)?;
        }
        Ok(t)
    }

    pub fn definition(&self) -> &TaskDefinition {
        &self.def
    }

    pub fn space(&self) -> &ConfigurationSpace {
        &self.space
    }

    pub fn options(&self) -> &TunerOptions {
        &self.options
    }

    pub fn history(&self) -> &[Observation] {
        &self.history
    }

    pub fn status(&self) -> TaskStatus {
        self.status
    }

    pub fn subspace_state(&self) -> &SubSpaceState {
        &self.subspace
    }

    pub fn pending(&self) -> Option<&Suggestion> {
        self.pending.as_ref()
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    /// Observations of the current epoch.
    pub fn epoch_history(&self) -> &[Observation] {
        &self.history[self.epoch_start..]
    }

    /// Resolved constraint thresholds; `None` until the first successful run
    /// fixes a default.
    pub fn thresholds(&self) -> Vec<(String, Option<f64>)> {
        self.def
            .constraints
            .iter()
            .zip(&self.thresholds)
            .map(|(c, t)| (c.metric.clone(), *t))
            .collect()
    }

    pub fn next_iteration(&self) -> u64 {
        self.history.last().map_or(1, |o| o.iteration + 1)
    }

    pub fn resource_function(&self) -> &ResourceFunctionSpec {
        &self.def.resource_function
    }

    /// Best feasible observation of the current epoch.
    pub fn best_feasible(&self) -> Option<&Observation> {
        best_of(self.epoch_history().iter().filter(|o| o.feasible && o.is_usable()))
    }

    /// Best feasible observation, else the lowest objective overall.
    pub fn incumbent(&self) -> Option<&Observation> {
        self.best_feasible()
            .or_else(|| best_of(self.epoch_history().iter().filter(|o| o.is_usable())))
    }

    fn y_best(&self) -> Option<f64> {
        self.incumbent().map(|o| o.objective)
    }

    // ---- suggest ----

    /// Next configuration to run under `context`. Repeated calls without an
    /// observation in between return the same suggestion.
    pub fn suggest(&mut self, context: &Context, meta: Option<MetaContext<'_>>) -> Result<Suggestion> {
        if let Some(p) = &self.pending {
            return Ok(p.clone());
        }
        let s = self.compute_suggestion(context, meta)?;
        if matches!(self.status, TaskStatus::Initializing | TaskStatus::Restarted) {
            self.status = TaskStatus::Running;
        }
        self.pending = Some(s.clone());
        Ok(s)
    }

    fn compute_suggestion(&mut self, context: &Context, meta: Option<MetaContext<'_>>) -> Result<Suggestion> {
        let iteration = self.next_iteration();
        if self.status == TaskStatus::Stopped {
            if let Some(best) = self.incumbent().cloned() {
                let expected = self.expected_objective(&best.configuration, context, iteration).ok();
                return Ok(Suggestion {
                    iteration,
                    configuration: best.configuration,
                    source: Source::Best,
                    acquisition: None,
                    expected_objective: expected,
                    context: context.clone(),
                });
            }
        }
        let n = self.epoch_history().len();
        let usable = self.epoch_history().iter().filter(|o| o.is_usable()).count();
        let make = |configuration, source, acquisition| Suggestion {
            iteration,
            configuration,
            source,
            acquisition,
            expected_objective: None,
            context: context.clone(),
        };
        if n < WARM_START_SIZE || usable == 0 {
            let (config, source) = self.initial_design(n, meta)?;
            return Ok(make(config, source, None));
        }
        if let Some(agd) = self.options.agd {
            if (n + 1) % agd.period == 0 {
                if let Some(c) = self.agd_suggestion(context, iteration, &agd)? {
                    return Ok(make(c, Source::Agd, None));
                }
            }
        }
        let (config, eic, fallback) = self.bo_suggestion(context, meta, iteration)?;
        let source = if fallback { Source::Fallback } else { Source::Bo };
        Ok(make(config, source, Some(eic)))
    }

    /// Configuration for position `n` of the epoch before a surrogate exists.
    fn initial_design(&self, n: usize, meta: Option<MetaContext<'_>>) -> Result<(Configuration, Source)> {
        let seed = derive_seed(self.def.seed, STREAM_INIT, self.epoch);
        if let Some(archive) = &self.archive {
            let mut list: Vec<Configuration> = archive.best_configs.iter().take(WARM_START_SIZE).cloned().collect();
            pad_with_samples(&self.space, &mut list, seed)?;
            return Ok((list[n % WARM_START_SIZE].clone(), Source::WarmStart));
        }
        if let Some(m) = meta.filter(|m| !m.repo.is_empty()) {
            let list = m.repo.warm_start(m.features, &self.space, seed)?;
            return Ok((list[n % WARM_START_SIZE].clone(), Source::WarmStart));
        }
        let count = (n + 1).max(WARM_START_SIZE);
        let list = sample_low_discrepancy(&self.space, count, seed)?;
        Ok((list[n].clone(), Source::Initial))
    }

    fn samples_for(&self, metric: &str) -> Result<Vec<Sample>> {
        self.epoch_history()
            .iter()
            .filter(|o| o.is_usable())
            .filter_map(|o| o.metric(metric).filter(|v| v.is_finite()).map(|v| (o, v)))
            .map(|(o, v)| Sample::from_config(&self.space, &o.configuration, o.context.clone(), v))
            .collect()
    }

    fn fit_metric(&self, metric: &str, iteration: u64, stream: u64) -> Result<GpSurrogate> {
        let samples = self.samples_for(metric)?;
        let opts = self
            .options
            .fit
            .clone()
            .with_seed(derive_seed(self.def.seed, STREAM_FIT + 16 * stream, iteration));
        GpSurrogate::fit(&self.space, &samples, &opts)
    }

    fn expected_objective(&self, config: &Configuration, context: &Context, iteration: u64) -> Result<f64> {
        let gp = self.fit_metric("objective", iteration, 0)?;
        Ok(gp.predict_config(&self.space, config, context)?.mean)
    }

    fn agd_suggestion(&self, context: &Context, iteration: u64, cfg: &AgdConfig) -> Result<Option<Configuration>> {
        let Some(best) = self.incumbent() else { return Ok(None) };
        let runtime = self.fit_metric("runtime", iteration, 1)?;
        let out = agd_step(
            &self.space,
            &best.configuration,
            context,
            &runtime,
            &self.def.resource_function,
            self.def.beta,
            cfg,
            best.runtime,
        )?;
        Ok(Some(out.configuration))
    }

    /// The report used to rank parameters for the sub-space right now.
    pub fn importance(&mut self) -> Result<ImportanceReport> {
        let usable = self.epoch_history().iter().filter(|o| o.is_usable()).count();
        let bucket = usable / self.options.importance_period.max(1);
        if let Some((b, r)) = &self.importance {
            if *b == bucket {
                return Ok(r.clone());
            }
        }
        let opts = ImportanceOptions {
            forest: crate::forest::ForestOptions {
                seed: derive_seed(self.def.seed, STREAM_IMPORTANCE, bucket as u64),
                ..Default::default()
            },
            pairs: false,
        };
        let report = importance_scores(self.epoch_history(), &self.space, &opts)?;
        self.importance = Some((bucket, report.clone()));
        Ok(report)
    }

    fn region(&mut self) -> Result<SubSpace> {
        let anchor = self
            .incumbent()
            .map(|o| o.configuration.clone())
            .unwrap_or_else(|| self.space.default_configuration());
        let k = self.subspace.k.clamp(1, self.space.dimension());
        if k == self.space.dimension() {
            return SubSpace::full(&self.space, anchor);
        }
        let report = self.importance()?;
        build_subspace(&self.space, &report, k, anchor)
    }

    fn objective_model(
        &self,
        current: GpSurrogate,
        meta: Option<MetaContext<'_>>,
    ) -> Result<Arc<dyn Surrogate>> {
        let current = Arc::new(current);
        if !self.options.ensemble {
            return Ok(current);
        }
        if let Some(archive) = &self.archive {
            let (mean, scale) = (current.gp().target_mean(), current.gp().target_scale());
            let base: Vec<(Arc<dyn Surrogate>, f64)> = vec![(Arc::new(archive.rescaled(mean, scale)), 0.5)];
            let w = loo_rank_accuracy(&current);
            return Ok(Arc::new(EnsembleSurrogate::new(base, Some((current as Arc<dyn Surrogate>, w)))?));
        }
        match meta.filter(|m| !m.repo.is_empty()) {
            Some(m) => Ok(Arc::new(m.repo.ensemble(m.features, current)?)),
            None => Ok(current),
        }
    }

    fn bo_suggestion(
        &mut self,
        context: &Context,
        meta: Option<MetaContext<'_>>,
        iteration: u64,
    ) -> Result<(Configuration, f64, bool)> {
        let y_best = self.y_best().ok_or_else(|| Error::State("no usable observation".into()))?;
        let objective_gp = self.fit_metric("objective", iteration, 0)?;
        let objective_model = self.objective_model(objective_gp, meta)?;

        let mut specs = Vec::new();
        let mut models = Vec::new();
        for (i, c) in self.def.constraints.iter().enumerate() {
            let Some(t) = self.thresholds[i] else { continue };
            if self.samples_for(&c.metric)?.is_empty() {
                continue;
            }
            specs.push(ConstraintSpec { name: format!("{}_max", c.metric), metric: c.metric.clone(), threshold: t });
            models.push(self.fit_metric(&c.metric, iteration, 2 + i as u64)?);
        }
        let constraints: Vec<ConstraintModel<'_>> = models
            .iter()
            .zip(&specs)
            .map(|(m, s)| ConstraintModel { model: m as &dyn Surrogate, spec: s })
            .collect();

        let region = self.region()?;
        let exclude: Vec<Vec<f64>> = self
            .epoch_history()
            .iter()
            .map(|o| self.space.normalize(&o.configuration))
            .collect::<Result<_>>()?;
        let opts = AcquisitionOptions { safety: self.options.safety, ..self.options.acquisition.clone() };
        let p = maximize_eic(
            &self.space,
            objective_model.as_ref(),
            &constraints,
            &region,
            context,
            y_best,
            &opts,
            derive_seed(self.def.seed, STREAM_ACQ, iteration),
            &exclude,
        )?;
        Ok((p.configuration, p.eic, p.fallback))
    }

    // ---- observe ----

    /// Records the result of the outstanding suggestion.
    pub fn observe(&mut self, m: Measurement) -> Result<Observation> {
        let obs = self.prepare(m, false, None)?;
        self.apply(obs.clone())?;
        Ok(obs)
    }

    /// Records a run of a configuration that was not suggested by this tuner.
    pub fn observe_imported(&mut self, config: &Configuration, m: Measurement) -> Result<Observation> {
        let obs = self.prepare(m, true, Some(config))?;
        self.apply(obs.clone())?;
        Ok(obs)
    }

    /// Builds the observation a measurement would produce without changing
    /// any state, so that it can be persisted before it is applied.
    pub fn prepare(&self, m: Measurement, imported: bool, config: Option<&Configuration>) -> Result<Observation> {
        let (configuration, source, acquisition, expected, iteration) = if imported {
            let c = config.ok_or_else(|| Error::Argument("imported run needs a configuration".into()))?;
            (self.space.validate(c)?, Source::Imported, None, None, self.next_iteration())
        } else {
            let p = self
                .pending
                .as_ref()
                .ok_or_else(|| Error::State("no outstanding suggestion to observe".into()))?;
            (p.configuration.clone(), p.source, p.acquisition, p.expected_objective, p.iteration)
        };
        if m.runtime.is_finite() && m.runtime <= 0.0 {
            return Err(Error::Domain(format!("runtime {} must be positive", m.runtime)));
        }
        if let Some(r) = m.resource {
            if r.is_finite() && r <= 0.0 {
                return Err(Error::Domain(format!("resource {r} must be positive")));
            }
        }
        let resource = match m.resource {
            Some(r) => r,
            None => self.def.resource_function.evaluate(&configuration)?,
        };
        let failed = m.failed
            || !m.runtime.is_finite()
            || !resource.is_finite()
            || m.metrics.values().any(|v| !v.is_finite());
        let objective_value = if failed {
            f64::INFINITY
        } else {
            objective(m.runtime, resource, self.def.beta)?
        };
        let mut obs = Observation {
            iteration,
            configuration,
            context: m.context,
            runtime: if failed && !m.runtime.is_finite() { f64::INFINITY } else { m.runtime },
            resource,
            objective: objective_value,
            metrics: m.metrics,
            feasible: false,
            failed,
            source,
            timestamp: m.timestamp,
            acquisition,
            expected_objective: expected,
            restart: self.epoch > 0 && self.epoch_start == self.history.len(),
        };
        if !failed {
            let thresholds = self.resolved_thresholds(&obs);
            obs.feasible = self
                .def
                .constraints
                .iter()
                .zip(&thresholds)
                .all(|(c, t)| match (t, obs.metric(&c.metric)) {
                    (Some(t), Some(v)) => v <= *t,
                    _ => false,
                });
        }
        Ok(obs)
    }

    /// Thresholds after `obs` is applied: missing ones default to twice the
    /// first successful run's metrics.
    fn resolved_thresholds(&self, obs: &Observation) -> Vec<Option<f64>> {
        self.def
            .constraints
            .iter()
            .zip(&self.thresholds)
            .map(|(c, t)| {
                t.or_else(|| {
                    if obs.failed {
                        None
                    } else {
                        obs.metric(&c.metric).filter(|v| v.is_finite()).map(|v| 2.0 * v)
                    }
                })
            })
            .collect()
    }

    /// Applies an observation (fresh or replayed from a log).
    pub fn apply(&mut self, mut obs: Observation) -> Result<()> {
        if obs.iteration < self.next_iteration() {
            return Err(Error::State(format!(
                "iteration {} is not after {}",
                obs.iteration,
                self.next_iteration() - 1
            )));
        }
        self.space.validate(&obs.configuration)?;
        if self.status == TaskStatus::Initializing {
            self.status = TaskStatus::Running;
        }
        let previous_best = self.best_feasible().map(|o| o.objective);
        self.thresholds = self.resolved_thresholds(&obs);
        if obs.failed {
            obs.feasible = false;
        }
        let improved = obs.feasible
            && obs.is_usable()
            && previous_best.is_none_or(|b| obs.objective < b);
        if obs.source != Source::Best {
            self.subspace.update(improved);
        }
        self.history.push(obs);
        self.pending = None;

        match self.status {
            TaskStatus::Stopped => {
                if self.should_restart() {
                    self.begin_epoch()?;
                    self.status = TaskStatus::Restarted;
                }
            }
            _ => {
                if self.should_stop() {
                    self.status = TaskStatus::Stopped;
                }
            }
        }
        Ok(())
    }

    fn begin_epoch(&mut self) -> Result<()> {
        let old: Vec<Observation> = self.epoch_history().to_vec();
        if old.iter().any(|o| o.is_usable()) {
            let features = MetaFeatureVector::new("self", Vec::new())?;
            let seed = derive_seed(self.def.seed, STREAM_FIT, u64::MAX - self.epoch);
            self.archive = Some(TaskRecord::new(&self.def.task_id, features, self.space.clone(), old, seed)?);
        }
        self.epoch += 1;
        self.epoch_start = self.history.len();
        self.subspace = match self.options.subspace {
            SubspaceMode::Adaptive => SubSpaceState::new(self.space.dimension()),
            _ => self.subspace.clone(),
        };
        self.importance = None;
        Ok(())
    }

    /// Budget used up, or the acquisition has stayed below `rho·|y*|` for
    /// the last three acquisition-driven suggestions. Never before five
    /// observations.
    pub fn should_stop(&self) -> bool {
        let h = self.epoch_history();
        if h.len() as u64 >= self.def.budget {
            return true;
        }
        if !self.options.early_stopping || h.len() < 5 {
            return false;
        }
        let Some(y) = self.y_best() else { return false };
        let recent: Vec<f64> = h.iter().rev().filter_map(|o| o.acquisition).take(3).collect();
        recent.len() == 3 && recent.iter().all(|a| *a < self.options.rho * y.abs())
    }

    /// The last `restart_window` replays all came out more than
    /// `restart_margin` above the expected objective.
    pub fn should_restart(&self) -> bool {
        let w = self.options.restart_window;
        if w == 0 {
            return false;
        }
        let h = self.epoch_history();
        if h.len() < w {
            return false;
        }
        h[h.len() - w..].iter().all(|o| {
            o.source == Source::Best
                && o.expected_objective
                    .is_some_and(|e| o.objective > (1.0 + self.options.restart_margin) * e)
        })
    }
}

fn best_of<'a>(it: impl Iterator<Item = &'a Observation>) -> Option<&'a Observation> {
    // first of equal objectives wins
    it.fold(None, |best: Option<&Observation>, o| match best {
        Some(b) if b.objective <= o.objective => Some(b),
        _ => Some(o),
    })
}

fn pad_with_samples(space: &ConfigurationSpace, list: &mut Vec<Configuration>, seed: u64) -> Result<()> {
    if list.len() >= WARM_START_SIZE {
        return Ok(());
    }
    for c in sample_low_discrepancy(space, 4 * WARM_START_SIZE, seed)? {
        if list.len() == WARM_START_SIZE {
            break;
        }
        if !list.contains(&c) {
            list.push(c);
        }
    }
    Ok(())
}
