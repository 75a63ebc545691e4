//! Append-only, line-delimited task logs.
//!
//! Each task lives in `<data-dir>/tasks/<task-id>.jsonl`. The first line
//! holds the task itself (definition, space, options, meta-features) and
//! every following line one observation:
//!
//! ```text
//! {"record":"task","data":{"definition":{...},"space":{...},...}}
//! {"record":"observation","data":{"iteration":1,...}}
//! ```
//!
//! Lines are written whole and synced before the engine applies them. A
//! crash in the middle of a write leaves a trailing fragment without a
//! newline; readers skip it and [`TaskLog::open`] truncates it away.

use std::fs::{self, File, OpenOptions};
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use otune_core::engine::{SubspaceMode, TaskDefinition, TunerOptions};
use otune_core::history::Observation;
use otune_core::meta::MetaFeatureVector;
use otune_core::space::ConfigurationSpace;
use serde::{Deserialize, Serialize};

use crate::error::{Result, ServiceError};

fn yes() -> bool {
    true
}

fn adaptive() -> SubspaceMode {
    SubspaceMode::Adaptive
}

/// Engine switches a client may set per task.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskOptions {
    #[serde(default = "yes")]
    pub safety: bool,
    #[serde(default = "yes")]
    pub agd: bool,
    #[serde(default = "adaptive")]
    pub subspace: SubspaceMode,
    #[serde(default = "yes")]
    pub early_stopping: bool,
    /// Warm start and ensemble from archived tasks with the same space.
    #[serde(default = "yes")]
    pub meta: bool,
}

impl Default for TaskOptions {
    fn default() -> Self {
        TaskOptions { safety: true, agd: true, subspace: SubspaceMode::Adaptive, early_stopping: true, meta: true }
    }
}

impl TaskOptions {
    pub fn tuner_options(&self) -> TunerOptions {
        let defaults = TunerOptions::default();
        TunerOptions {
            safety: if self.safety { defaults.safety } else { None },
            agd: if self.agd { defaults.agd } else { None },
            subspace: self.subspace,
            early_stopping: self.early_stopping,
            ensemble: self.meta,
            ..defaults
        }
    }
}

/// Everything needed to rebuild a task apart from its observations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSpec {
    pub definition: TaskDefinition,
    /// Space document, stored inline so a log is self-contained.
    pub space: serde_json::Value,
    #[serde(default)]
    pub options: TaskOptions,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub meta_features: Option<MetaFeatureVector>,
}

impl TaskSpec {
    pub fn space(&self) -> Result<ConfigurationSpace> {
        Ok(ConfigurationSpace::from_json(&self.space.to_string())?)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", content = "data", rename_all = "snake_case")]
pub enum LogRecord {
    Task(TaskSpec),
    Observation(Observation),
}

/// Where a test hook may interrupt [`TaskLog::append`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FaultPoint {
    /// Nothing written yet.
    BeforePersist,
    /// Half of the line written and synced.
    TornWrite,
    /// The line is durable but the engine has not applied it.
    AfterPersist,
}

impl FaultPoint {
    pub fn label(self) -> &'static str {
        match self {
            FaultPoint::BeforePersist => "before-persist",
            FaultPoint::TornWrite => "torn-write",
            FaultPoint::AfterPersist => "after-persist",
        }
    }
}

/// Returns true to simulate a crash at the given point.
pub type FaultHook = Arc<dyn Fn(FaultPoint) -> bool + Send + Sync>;

/// Contents of a log file.
#[derive(Clone, Debug, PartialEq)]
pub struct LogContents {
    pub spec: TaskSpec,
    pub observations: Vec<Observation>,
    /// Byte length of the complete lines; anything after it is a torn write.
    pub valid_len: u64,
    pub torn: bool,
}

/// Parses a log without modifying it.
pub fn read_log(path: &Path) -> Result<LogContents> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    parse_log(&bytes).map_err(|e| match e {
        ServiceError::Corrupt(m) => ServiceError::Corrupt(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn parse_log(bytes: &[u8]) -> Result<LogContents> {
    let complete = bytes.iter().rposition(|b| *b == b'\n').map_or(0, |i| i + 1);
    let text = std::str::from_utf8(&bytes[..complete])
        .map_err(|_| ServiceError::Corrupt("log is not UTF-8".into()))?;
    let mut spec = None;
    let mut observations = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let record: LogRecord = serde_json::from_str(line)
            .map_err(|e| ServiceError::Corrupt(format!("line {}: {e}", n + 1)))?;
        match (record, n) {
            (LogRecord::Task(s), 0) => spec = Some(s),
            (LogRecord::Observation(o), n) if n > 0 => observations.push(o),
            _ => return Err(ServiceError::Corrupt(format!("line {}: unexpected record", n + 1))),
        }
    }
    let spec = spec.ok_or_else(|| ServiceError::Corrupt("missing task header".into()))?;
    Ok(LogContents { spec, observations, valid_len: complete as u64, torn: complete < bytes.len() })
}

/// An open task log positioned for appending.
#[derive(Debug)]
pub struct TaskLog {
    path: PathBuf,
    file: File,
}

impl TaskLog {
    /// Writes a new log holding only the header. The header goes to a
    /// temporary file first, so a log on disk always has a complete one.
    pub fn create(path: &Path, spec: &TaskSpec) -> Result<Self> {
        if path.exists() {
            return Err(ServiceError::Conflict(format!("{} already exists", path.display())));
        }
        let tmp = path.with_extension("jsonl.tmp");
        {
            let mut f = File::create(&tmp)?;
            f.write_all(line(&LogRecord::Task(spec.clone())).as_bytes())?;
            f.sync_all()?;
        }
        fs::rename(&tmp, path)?;
        if let Some(dir) = path.parent() {
            // make the rename itself durable
            File::open(dir)?.sync_all()?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok(TaskLog { path: path.to_path_buf(), file })
    }

    /// Opens an existing log, dropping a torn trailing line.
    pub fn open(path: &Path) -> Result<(Self, LogContents)> {
        let contents = read_log(path)?;
        if contents.torn {
            log::warn!("{}: discarding torn trailing record", path.display());
            let f = OpenOptions::new().write(true).open(path)?;
            f.set_len(contents.valid_len)?;
            f.sync_all()?;
        }
        let file = OpenOptions::new().append(true).open(path)?;
        Ok((TaskLog { path: path.to_path_buf(), file }, contents))
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Durably appends one observation.
    pub fn append(&mut self, obs: &Observation, fault: Option<&FaultHook>) -> Result<()> {
        let crash = |p: FaultPoint| fault.is_some_and(|f| f(p));
        if crash(FaultPoint::BeforePersist) {
            return Err(ServiceError::Crashed(FaultPoint::BeforePersist.label()));
        }
        let text = line(&LogRecord::Observation(obs.clone()));
        if crash(FaultPoint::TornWrite) {
            self.file.write_all(&text.as_bytes()[..text.len() / 2])?;
            self.file.sync_data()?;
            return Err(ServiceError::Crashed(FaultPoint::TornWrite.label()));
        }
        self.file.write_all(text.as_bytes())?;
        self.file.sync_data()?;
        if crash(FaultPoint::AfterPersist) {
            return Err(ServiceError::Crashed(FaultPoint::AfterPersist.label()));
        }
        Ok(())
    }
}

fn line(record: &LogRecord) -> String {
    let mut s = serde_json::to_string(record).expect("log records serialize");
    s.push('\n');
    s
}

/// `<data-dir>/tasks`, created on demand.
pub fn tasks_dir(data_dir: &Path) -> Result<PathBuf> {
    let dir = data_dir.join("tasks");
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

pub fn log_path(data_dir: &Path, task_id: &str) -> Result<PathBuf> {
    Ok(tasks_dir(data_dir)?.join(format!("{task_id}.jsonl")))
}

/// Every task log in the data directory, sorted by file name.
pub fn list_logs(data_dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(tasks_dir(data_dir)?)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    out.sort();
    Ok(out)
}
