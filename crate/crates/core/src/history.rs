//! Observations and the per-task run history.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::space::Configuration;

/// Workload context of one execution: input data size and/or the position
/// of the run within its period (hour of day as a fraction of the day, for
/// example).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Context {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data_size: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub period: Option<f64>,
}

impl Context {
    pub fn data_size(ds: f64) -> Self {
        Context {
            data_size: Some(ds),
            period: None,
        }
    }

    pub fn period(fraction: f64) -> Self {
        Context {
            data_size: None,
            period: Some(fraction),
        }
    }
}

/// Where a suggested configuration came from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    WarmStart,
    Initial,
    Bo,
    Agd,
    Fallback,
    Best,
    Imported,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::WarmStart => "warm_start",
            Source::Initial => "initial",
            Source::Bo => "bo",
            Source::Agd => "agd",
            Source::Fallback => "fallback",
            Source::Best => "best",
            Source::Imported => "imported",
        })
    }
}

/// One evaluated configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Observation {
    pub iteration: u64,
    pub configuration: Configuration,
    #[serde(default)]
    pub context: Context,
    #[serde(with = "finite_or_null")]
    pub runtime: f64,
    #[serde(with = "finite_or_null")]
    pub resource: f64,
    #[serde(with = "finite_or_null")]
    pub objective: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub metrics: BTreeMap<String, f64>,
    pub feasible: bool,
    #[serde(default)]
    pub failed: bool,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamp: Option<u64>,
    /// Maximal acquisition value found when this configuration was suggested.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub acquisition: Option<f64>,
    /// Surrogate expectation of the objective at suggestion time (replays only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub expected_objective: Option<f64>,
    /// Start of a new tuning epoch after a restart.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub restart: bool,
}

impl Observation {
    /// Value of a named metric; `runtime` and `resource` are built in.
    pub fn metric(&self, name: &str) -> Option<f64> {
        match name {
            "runtime" => Some(self.runtime),
            "resource" => Some(self.resource),
            "objective" => Some(self.objective),
            other => self.metrics.get(other).copied(),
        }
    }

    /// Usable as a surrogate target.
    pub fn is_usable(&self) -> bool {
        !self.failed && self.objective.is_finite()
    }
}

/// The generalized objective `T^β · R^(1−β)`.
pub fn objective(runtime: f64, resource: f64, beta: f64) -> crate::Result<f64> {
    if !(runtime > 0.0 && resource > 0.0) || !runtime.is_finite() || !resource.is_finite() {
        return Err(crate::Error::Domain(format!(
            "runtime ({runtime}) and resource ({resource}) must be positive"
        )));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(crate::Error::Domain(format!("beta {beta} outside [0,1]")));
    }
    Ok(runtime.powf(beta) * resource.powf(1.0 - beta))
}

/// Non-finite floats are stored as `null` and read back as `+∞`.
pub mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}
