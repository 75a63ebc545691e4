//! A deterministic stand-in for a recurring Spark-like job.
//!
//! Runtime follows Amdahl's law over `instances·cores` with a linear
//! coordination overhead, a memory penalty when the per-executor share of
//! the working set does not fit, multiplicative response curves for the
//! remaining knobs and lognormal noise:
//!
//! ```text
//! T = W · ds^α · [(1−p) + p/n + s·n] · mem_penalty · Π responses · noise
//! mem_penalty = 1 + κ · max(0, need − memory) / need
//! ```
//!
//! where `need` is the job's memory demand at data size `ds` divided over
//! the executors. Every random quantity is a pure function of the job seed,
//! the configuration and the iteration, so runs replay bit for bit.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use otune_core::engine::{Measurement, ResourceFunctionSpec, CORES, INSTANCES, MEMORY};
use otune_core::history::Context;
use otune_core::meta::MetaFeatureVector;
use otune_core::space::{Configuration, ConfigurationSpace, Value};
use otune_core::agd::ResourceFunction;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

/// Schema id of [`SyntheticJobSpec::meta_features`].
pub const FEATURE_SCHEMA: &str = "sim-12";

fn default_kappa() -> f64 {
    4.0
}

/// Working-set model: `need · ds` GB spread evenly over the executors.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MemoryModel {
    pub need: f64,
    #[serde(default = "default_kappa")]
    pub kappa: f64,
    /// Executors die when memory falls below this fraction of their share.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub oom_below: Option<f64>,
}

/// Multiplicative effect of one parameter on runtime.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ResponseCurve {
    /// `1 + weight·((x − optimum)/width)²`, in log space when `log` is set.
    Quadratic {
        param: String,
        optimum: f64,
        width: f64,
        weight: f64,
        #[serde(default, skip_serializing_if = "std::ops::Not::not")]
        log: bool,
    },
    /// `1 + penalty[choice]`; unlisted choices cost nothing.
    Choice { param: String, penalties: BTreeMap<String, f64> },
}

impl ResponseCurve {
    pub fn param(&self) -> &str {
        match self {
            ResponseCurve::Quadratic { param, .. } | ResponseCurve::Choice { param, .. } => param,
        }
    }

    fn factor(&self, config: &Configuration) -> f64 {
        match self {
            ResponseCurve::Quadratic { param, optimum, width, weight, log } => {
                let Some(x) = config.get(param).and_then(Value::as_f64) else { return 1.0 };
                let z = if *log { (x.ln() - optimum.ln()) / width } else { (x - optimum) / width };
                1.0 + weight * z * z
            }
            ResponseCurve::Choice { param, penalties } => match config.get(param) {
                Some(Value::Choice(s)) => 1.0 + penalties.get(s).copied().unwrap_or(0.0),
                _ => 1.0,
            },
        }
    }
}

fn default_period() -> f64 {
    24.0
}

fn default_amplitude() -> f64 {
    0.3
}

/// Sinusoidal data-size cycle over iterations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Drift {
    #[serde(default = "default_period")]
    pub period: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

impl Default for Drift {
    fn default() -> Self {
        Drift { period: default_period(), amplitude: default_amplitude() }
    }
}

impl Drift {
    pub fn none() -> Self {
        Drift { amplitude: 0.0, ..Drift::default() }
    }
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticJobSpec {
    pub family: String,
    pub base_work: f64,
    pub parallel_fraction: f64,
    /// Nominal input size; the drift modulates it.
    #[serde(default = "one")]
    pub data_size: f64,
    #[serde(default = "one")]
    pub alpha: f64,
    /// Coordination cost per unit of parallelism (the shuffle term).
    #[serde(default)]
    pub shuffle: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub memory: Option<MemoryModel>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<ResponseCurve>,
    /// Lognormal sigma of the multiplicative noise.
    #[serde(default)]
    pub noise: f64,
    #[serde(default)]
    pub drift: Drift,
    #[serde(default)]
    pub seed: u64,
}

/// Outcome of one simulated run.
#[derive(Clone, Debug, PartialEq)]
pub struct ExecutionResult {
    /// Seconds; infinite for a failed run.
    pub runtime: f64,
    pub resource: f64,
    pub failed: bool,
    /// Extra metrics usable as constraints.
    pub metrics: BTreeMap<String, f64>,
    pub context: Context,
    pub features: MetaFeatureVector,
}

impl ExecutionResult {
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "runtime" => Some(self.runtime),
            "resource" => Some(self.resource),
            other => self.metrics.get(other).copied(),
        }
    }

    /// The measurement a client would report for this run.
    pub fn measurement(&self) -> Measurement {
        let mut m = if self.failed {
            Measurement::failed(self.context.clone())
        } else {
            Measurement::new(self.runtime, self.context.clone())
        };
        m.resource = Some(self.resource);
        if !self.failed {
            m.metrics = self.metrics.clone();
        }
        m
    }
}

impl SyntheticJobSpec {
    pub fn validate(&self, space: &ConfigurationSpace) -> Result<()> {
        let bad = |msg: String| Err(HarnessError::Scenario(format!("job {}: {msg}", self.family)));
        if !(self.base_work > 0.0 && self.base_work.is_finite()) {
            return bad("base_work must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.parallel_fraction) {
            return bad("parallel_fraction outside [0,1]".into());
        }
        if !(self.data_size > 0.0) || !self.alpha.is_finite() || !(self.shuffle >= 0.0) || !(self.noise >= 0.0) {
            return bad("data_size must be positive; shuffle and noise non-negative".into());
        }
        if !(self.drift.period > 0.0) || !(0.0..1.0).contains(&self.drift.amplitude) {
            return bad("drift needs period > 0 and amplitude in [0,1)".into());
        }
        if let Some(m) = &self.memory {
            if !(m.need > 0.0) || !(m.kappa >= 0.0) {
                return bad("memory.need must be positive and kappa non-negative".into());
            }
        }
        for r in &self.responses {
            if space.param(r.param()).is_none() {
                return bad(format!("response on unknown parameter {}", r.param()));
            }
            if let ResponseCurve::Quadratic { width, weight, optimum, log, .. } = r {
                if !(*width > 0.0) || !(*weight >= 0.0) || (*log && !(*optimum > 0.0)) {
                    return bad(format!("bad response curve on {}", r.param()));
                }
            }
        }
        Ok(())
    }

    /// Data size seen at `iteration`.
    pub fn data_size_at(&self, iteration: u64) -> f64 {
        let phase = 2.0 * PI * iteration as f64 / self.drift.period;
        self.data_size * (1.0 + self.drift.amplitude * phase.sin())
    }

    /// Copy of the job whose noise stream is tied to a run seed.
    pub fn reseeded(&self, run_seed: u64) -> Self {
        SyntheticJobSpec { seed: otune_core::engine::derive_seed(self.seed, 0x6a6f62, run_seed), ..self.clone() }
    }

    /// The abstract 12-value description of the job used for meta-learning.
    pub fn meta_features(&self) -> MetaFeatureVector {
        let (need, kappa, oom) = match &self.memory {
            Some(m) => (m.need, m.kappa, m.oom_below.unwrap_or(0.0)),
            None => (0.0, 0.0, 0.0),
        };
        let values = vec![
            1.0 + self.responses.len() as f64,
            (self.base_work * self.data_size).ln(),
            1000.0 * self.shuffle,
            self.parallel_fraction,
            self.data_size.ln(),
            self.drift.amplitude,
            self.alpha,
            need,
            kappa,
            10.0 * (1.0 - self.parallel_fraction),
            self.noise,
            oom,
        ];
        MetaFeatureVector::new(FEATURE_SCHEMA, values).expect("job parameters are finite")
    }

    fn noise_factor(&self, config: &Configuration, iteration: u64) -> f64 {
        if self.noise == 0.0 {
            return 1.0;
        }
        let key = serde_json::to_string(config).expect("configurations serialize");
        let seed = otune_core::engine::derive_seed(self.seed ^ fnv1a(key.as_bytes()), 0x6e6f6973, iteration);
        let z: f64 = StandardNormal.sample(&mut ChaCha8Rng::seed_from_u64(seed));
        (self.noise * z).exp()
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ u64::from(*b)).wrapping_mul(0x0100_0000_01b3))
}

/// Runs `config` at `iteration`, with noise.
pub fn simulate_execution(
    spec: &SyntheticJobSpec,
    config: &Configuration,
    iteration: u64,
    resource: &ResourceFunctionSpec,
) -> Result<ExecutionResult> {
    execute(spec, config, iteration, resource, true)
}

/// Same as [`simulate_execution`] without noise, as used by the oracle.
pub fn simulate_noiseless(
    spec: &SyntheticJobSpec,
    config: &Configuration,
    iteration: u64,
    resource: &ResourceFunctionSpec,
) -> Result<ExecutionResult> {
    execute(spec, config, iteration, resource, false)
}

fn execute(
    spec: &SyntheticJobSpec,
    config: &Configuration,
    iteration: u64,
    resource: &ResourceFunctionSpec,
    noisy: bool,
) -> Result<ExecutionResult> {
    let instances = resource.quantity(config, INSTANCES)?;
    let cores = resource.quantity(config, CORES)?;
    let memory = resource.quantity(config, MEMORY)?;
    let r = resource.evaluate(config)?;
    let ds = spec.data_size_at(iteration);
    let context = Context::data_size(ds);

    let n = instances * cores;
    let p = spec.parallel_fraction;
    let scaling = (1.0 - p) + p / n + spec.shuffle * n;

    let mut metrics = BTreeMap::new();
    let mut failed = false;
    let mut penalty = 1.0;
    if let Some(m) = &spec.memory {
        let share = m.need * ds / instances;
        penalty += m.kappa * (share - memory).max(0.0) / share;
        metrics.insert("memory_pressure".to_owned(), share / memory);
        failed = m.oom_below.is_some_and(|f| memory < f * share);
    }
    let responses: f64 = spec.responses.iter().map(|c| c.factor(config)).product();
    let noise = if noisy { spec.noise_factor(config, iteration) } else { 1.0 };
    let runtime = spec.base_work * ds.powf(spec.alpha) * scaling * penalty * responses * noise;
    Ok(ExecutionResult {
        runtime: if failed { f64::INFINITY } else { runtime },
        resource: r,
        failed,
        metrics,
        context,
        features: spec.meta_features(),
    })
}
