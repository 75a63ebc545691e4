//! Task registry: engine state per task, durable logs and the archive used
//! for warm starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use otune_core::engine::{MetaContext, Measurement, Suggestion, TaskDefinition, TaskStatus, Tuner};
use otune_core::history::{Context, Observation};
use otune_core::meta::{MetaFeatureVector, MetaRepository, TaskRecord};
use otune_core::space::{Configuration, ConfigurationSpace};
use otune_core::subspace::{ImportanceReport, SubSpaceState};
use otune_harness::families::{family_space, reference_space};
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};
use crate::store::{list_logs, log_path, FaultHook, TaskLog, TaskOptions, TaskSpec};

/// Body of a create-task request.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateTask {
    pub definition: TaskDefinition,
    /// Inline space document; when absent `definition.space_ref` names a
    /// built-in space or a file under the data directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub space: Option<serde_json::Value>,
    #[serde(default)]
    pub options: TaskOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_features: Option<MetaFeatureVector>,
}

/// The incumbent as reported to clients.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Best {
    pub iteration: u64,
    pub configuration: Configuration,
    pub objective: f64,
    pub feasible: bool,
}

impl From<&Observation> for Best {
    fn from(o: &Observation) -> Self {
        Best { iteration: o.iteration, configuration: o.configuration.clone(), objective: o.objective, feasible: o.feasible }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatusReport {
    pub task_id: String,
    pub status: TaskStatus,
    pub observations: usize,
    pub budget: u64,
    pub epoch: u64,
    pub next_iteration: u64,
    /// Iteration of the outstanding suggestion, if any.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pending: Option<u64>,
    pub subspace: SubSpaceState,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObserveAck {
    pub iteration: u64,
    pub history_length: usize,
    pub feasible: bool,
    pub failed: bool,
    pub status: TaskStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub incumbent: Option<Best>,
    /// The iteration had already been recorded; nothing changed.
    #[serde(default)]
    pub duplicate: bool,
}

/// Everything about a task that replaying its log must reproduce.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskSnapshot {
    pub spec: TaskSpec,
    pub status: TaskStatus,
    pub epoch: u64,
    pub subspace: SubSpaceState,
    pub thresholds: Vec<(String, Option<f64>)>,
    pub history: Vec<Observation>,
    pub incumbent: Option<Best>,
}

struct TaskEntry {
    spec: TaskSpec,
    tuner: Tuner,
    log: TaskLog,
    /// Set after an injected crash: memory and disk may disagree.
    poisoned: bool,
}

impl TaskEntry {
    fn check(&self) -> Result<()> {
        if self.poisoned {
            return Err(ServiceError::State("task state is stale after a crash; restart the service".into()));
        }
        Ok(())
    }

    fn snapshot(&self) -> TaskSnapshot {
        TaskSnapshot {
            spec: self.spec.clone(),
            status: self.tuner.status(),
            epoch: self.tuner.epoch(),
            subspace: self.tuner.subspace_state().clone(),
            thresholds: self.tuner.thresholds(),
            history: self.tuner.history().to_vec(),
            incumbent: self.tuner.incumbent().map(Best::from),
        }
    }
}

/// A finished task kept for warm starts.
#[derive(Clone)]
struct Archived {
    space: String,
    features: MetaFeatureVector,
    seed: u64,
    space_def: ConfigurationSpace,
    history: Vec<Observation>,
}

#[derive(Default)]
struct Archive {
    tasks: BTreeMap<String, Archived>,
    /// Trained repositories by space document, rebuilt when the archive changes.
    repos: BTreeMap<String, (u64, Arc<MetaRepository>)>,
    generation: u64,
}

/// The tuning service. Requests for one task are serialized by that
/// task's lock; different tasks proceed in parallel.
pub struct Service {
    data_dir: PathBuf,
    tasks: Mutex<BTreeMap<String, Arc<Mutex<TaskEntry>>>>,
    archive: Mutex<Archive>,
    fault: Option<FaultHook>,
    meta_seed: u64,
}

/// Seed for training the meta-learning distance model unless one is given.
pub const DEFAULT_META_SEED: u64 = 0x6d65_7461;

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    // a panic while holding a lock leaves data that is still consistent
    // with the log, which is the source of truth
    m.lock().unwrap_or_else(|e| e.into_inner())
}

impl Service {
    /// Opens (or initializes) a data directory and replays every task log.
    pub fn open(data_dir: &Path) -> Result<Self> {
        Self::open_with(data_dir, None, DEFAULT_META_SEED)
    }

    /// Like [`Service::open`], with a crash-injection hook and the seed used
    /// to train the meta-learning distance model.
    pub fn open_with(data_dir: &Path, fault: Option<FaultHook>, meta_seed: u64) -> Result<Self> {
        let service = Service {
            data_dir: data_dir.to_path_buf(),
            tasks: Mutex::new(BTreeMap::new()),
            archive: Mutex::new(Archive::default()),
            fault,
            meta_seed,
        };
        for path in list_logs(data_dir)? {
            let (log, contents) = TaskLog::open(&path)?;
            let space = contents.spec.space()?;
            let tuner = Tuner::replay(
                contents.spec.definition.clone(),
                space,
                contents.spec.options.tuner_options(),
                contents.observations,
            )?;
            let id = contents.spec.definition.task_id.clone();
            let entry = TaskEntry { spec: contents.spec, tuner, log, poisoned: false };
            service.archive_if_done(&entry);
            log::info!("loaded task {id} ({} observations)", entry.tuner.history().len());
            lock(&service.tasks).insert(id, Arc::new(Mutex::new(entry)));
        }
        Ok(service)
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    pub fn task_ids(&self) -> Vec<String> {
        lock(&self.tasks).keys().cloned().collect()
    }

    fn entry(&self, task_id: &str) -> Result<Arc<Mutex<TaskEntry>>> {
        lock(&self.tasks).get(task_id).cloned().ok_or_else(|| ServiceError::NotFound(task_id.into()))
    }

    fn resolve_space(&self, req: &CreateTask) -> Result<serde_json::Value> {
        if let Some(doc) = &req.space {
            ConfigurationSpace::from_json(&doc.to_string())?;
            return Ok(doc.clone());
        }
        let space = match req.definition.space_ref.as_str() {
            "builtin:reference" => reference_space(),
            "builtin:families" => family_space(),
            other => {
                let rel = Path::new(other);
                if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
                    return Err(ServiceError::Invalid(format!("space_ref: {other} must be relative to the data directory")));
                }
                let path = self.data_dir.join(rel);
                ConfigurationSpace::load(&path)
                    .map_err(|e| ServiceError::Invalid(format!("space_ref: {e}")))?
            }
        };
        Ok(serde_json::from_str(&space.to_json()).expect("space documents are JSON"))
    }

    /// Registers a task. Resubmitting an identical request returns the same
    /// id; a different body under an existing id is a conflict.
    pub fn create_task(&self, req: CreateTask) -> Result<(String, TaskStatus)> {
        req.definition.validate()?;
        let spec = TaskSpec {
            space: self.resolve_space(&req)?,
            definition: req.definition,
            options: req.options,
            meta_features: req.meta_features,
        };
        let space = spec.space()?;
        let id = spec.definition.task_id.clone();
        let mut tasks = lock(&self.tasks);
        if let Some(existing) = tasks.get(&id) {
            let e = lock(existing);
            if e.spec == spec {
                return Ok((id, e.tuner.status()));
            }
            return Err(ServiceError::Conflict(format!("task {id} exists with a different definition")));
        }
        let tuner = Tuner::new(spec.definition.clone(), space, spec.options.tuner_options())?;
        let log = TaskLog::create(&log_path(&self.data_dir, &id)?, &spec)?;
        let status = tuner.status();
        tasks.insert(id.clone(), Arc::new(Mutex::new(TaskEntry { spec, tuner, log, poisoned: false })));
        log::info!("created task {id}");
        Ok((id, status))
    }

    /// The outstanding suggestion, or a new one. Idempotent until the
    /// matching observe.
    pub fn suggest(&self, task_id: &str, context: &Context) -> Result<Suggestion> {
        let entry = self.entry(task_id)?;
        let mut e = lock(&entry);
        e.check()?;
        if let Some(p) = e.tuner.pending() {
            return Ok(p.clone());
        }
        let repo = match (&e.spec.meta_features, e.spec.options.meta) {
            (Some(_), true) => self.repository(&e.spec.space, task_id)?,
            _ => None,
        };
        let e = &mut *e;
        let meta = match (&repo, &e.spec.meta_features) {
            (Some(r), Some(f)) => Some(MetaContext { repo: r.as_ref(), features: f }),
            _ => None,
        };
        Ok(e.tuner.suggest(context, meta)?)
    }

    /// Persists, then applies, one measurement. `imported` runs carry their
    /// own configuration and need no outstanding suggestion.
    ///
    /// A client that names the `iteration` it is reporting may retry safely:
    /// a repeat for an iteration already recorded returns the original
    /// acknowledgment without recording anything.
    pub fn observe(
        &self,
        task_id: &str,
        m: Measurement,
        imported: Option<&Configuration>,
        iteration: Option<u64>,
    ) -> Result<ObserveAck> {
        let entry = self.entry(task_id)?;
        let mut e = lock(&entry);
        e.check()?;
        if let (Some(it), None) = (iteration, imported) {
            if e.tuner.pending().map(|p| p.iteration) != Some(it) {
                let Some(done) = e.tuner.history().iter().find(|o| o.iteration == it && !o.restart) else {
                    return Err(ServiceError::State(format!("iteration {it} is not outstanding")));
                };
                return Ok(ObserveAck {
                    iteration: it,
                    history_length: e.tuner.history().len(),
                    feasible: done.feasible,
                    failed: done.failed,
                    status: e.tuner.status(),
                    incumbent: e.tuner.incumbent().map(Best::from),
                    duplicate: true,
                });
            }
        }
        let obs = e.tuner.prepare(m, imported.is_some(), imported)?;
        if let Err(err) = e.log.append(&obs, self.fault.as_ref()) {
            if matches!(err, ServiceError::Crashed(_)) {
                e.poisoned = true;
            }
            return Err(err);
        }
        e.tuner.apply(obs.clone())?;
        self.archive_if_done(&e);
        Ok(ObserveAck {
            iteration: obs.iteration,
            history_length: e.tuner.history().len(),
            feasible: obs.feasible,
            failed: obs.failed,
            status: e.tuner.status(),
            incumbent: e.tuner.incumbent().map(Best::from),
            duplicate: false,
        })
    }

    /// Best feasible observation, else the lowest objective flagged infeasible.
    pub fn best(&self, task_id: &str) -> Result<Best> {
        let entry = self.entry(task_id)?;
        let e = lock(&entry);
        e.check()?;
        e.tuner
            .incumbent()
            .map(Best::from)
            .ok_or_else(|| ServiceError::NotReady(format!("task {task_id} has no usable observation yet")))
    }

    pub fn status(&self, task_id: &str) -> Result<StatusReport> {
        let entry = self.entry(task_id)?;
        let e = lock(&entry);
        e.check()?;
        Ok(StatusReport {
            task_id: task_id.into(),
            status: e.tuner.status(),
            observations: e.tuner.history().len(),
            budget: e.spec.definition.budget,
            epoch: e.tuner.epoch(),
            next_iteration: e.tuner.next_iteration(),
            pending: e.tuner.pending().map(|p| p.iteration),
            subspace: e.tuner.subspace_state().clone(),
        })
    }

    pub fn export_history(&self, task_id: &str) -> Result<(TaskSpec, Vec<Observation>)> {
        let entry = self.entry(task_id)?;
        let e = lock(&entry);
        Ok((e.spec.clone(), e.tuner.history().to_vec()))
    }

    pub fn importance(&self, task_id: &str) -> Result<ImportanceReport> {
        let entry = self.entry(task_id)?;
        let mut e = lock(&entry);
        Ok(e.tuner.importance()?)
    }

    pub fn snapshot(&self, task_id: &str) -> Result<TaskSnapshot> {
        let entry = self.entry(task_id)?;
        let e = lock(&entry);
        Ok(e.snapshot())
    }

    fn archive_if_done(&self, e: &TaskEntry) {
        let (Some(features), TaskStatus::Stopped) = (&e.spec.meta_features, e.tuner.status()) else { return };
        if !e.tuner.history().iter().any(|o| o.is_usable()) {
            return;
        }
        let mut a = lock(&self.archive);
        a.tasks.insert(
            e.spec.definition.task_id.clone(),
            Archived {
                space: e.spec.space.to_string(),
                features: features.clone(),
                seed: e.spec.definition.seed,
                space_def: e.tuner.space().clone(),
                history: e.tuner.history().to_vec(),
            },
        );
        a.generation += 1;
    }

    /// Archived tasks over the same space, excluding `task_id`.
    fn repository(&self, space: &serde_json::Value, task_id: &str) -> Result<Option<Arc<MetaRepository>>> {
        let key = space.to_string();
        let (generation, members) = {
            let a = lock(&self.archive);
            if let Some((g, repo)) = a.repos.get(&key) {
                if *g == a.generation && repo.records.iter().all(|r| r.task_id != task_id) {
                    return Ok(Some(repo.clone()).filter(|r| !r.is_empty()));
                }
            }
            let members: Vec<(String, Archived)> = a
                .tasks
                .iter()
                .filter(|(id, t)| t.space == key && id.as_str() != task_id)
                .map(|(id, t)| (id.clone(), t.clone()))
                .collect();
            (a.generation, members)
        };
        // fitting happens outside the archive lock
        let records = members
            .into_iter()
            .map(|(id, t)| TaskRecord::new(&id, t.features, t.space_def, t.history, t.seed))
            .collect::<otune_core::Result<Vec<_>>>()?;
        let mut repo = MetaRepository::new(records);
        repo.train(64, self.meta_seed)?;
        let repo = Arc::new(repo);
        let mut a = lock(&self.archive);
        if a.generation == generation {
            a.repos.insert(key, (generation, repo.clone()));
        }
        Ok(Some(repo).filter(|r| !r.is_empty()))
    }
}
