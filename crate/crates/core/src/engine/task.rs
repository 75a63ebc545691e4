use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::agd::ResourceFunction;
use crate::error::{Error, Result};
use crate::space::{Configuration, ConfigurationSpace};

pub const INSTANCES: &str = "spark.executor.instances";
pub const CORES: &str = "spark.executor.cores";
/// Per-executor memory in GB.
pub const MEMORY: &str = "spark.executor.memory";

/// `R = instances·cores + c·instances·memory`.
///
/// Quantities that are not tuning parameters can be pinned through `fixed`,
/// keyed by parameter name.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResourceFunctionSpec {
    pub c: f64,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fixed: BTreeMap<String, f64>,
}

impl ResourceFunctionSpec {
    pub fn new(c: f64) -> Self {
        ResourceFunctionSpec { c, fixed: BTreeMap::new() }
    }

    pub fn with_fixed(mut self, name: &str, value: f64) -> Self {
        self.fixed.insert(name.to_owned(), value);
        self
    }

    /// Value of `name` in `config`, else the pinned value.
    pub fn quantity(&self, config: &Configuration, name: &str) -> Result<f64> {
        if let Some(v) = config.get(name) {
            return v
                .as_f64()
                .ok_or_else(|| Error::Schema(format!("{name} must be numeric")));
        }
        self.fixed
            .get(name)
            .copied()
            .ok_or_else(|| Error::Schema(format!("resource function needs {name}")))
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c >= 0.0 && self.c.is_finite()) {
            return Err(Error::Schema("resource_function.c: must be a non-negative number".into()));
        }
        if let Some((k, _)) = self.fixed.iter().find(|(_, v)| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Schema(format!("resource_function.fixed.{k}: must be positive")));
        }
        Ok(())
    }
}

impl ResourceFunction for ResourceFunctionSpec {
    fn evaluate(&self, config: &Configuration) -> Result<f64> {
        let i = self.quantity(config, INSTANCES)?;
        let c = self.quantity(config, CORES)?;
        let m = self.quantity(config, MEMORY)?;
        let r = i * c + self.c * i * m;
        if !(r > 0.0) {
            return Err(Error::Domain(format!("resource usage {r} is not positive")));
        }
        Ok(r)
    }

    fn unit_gradient(&self, space: &ConfigurationSpace, unit: &[f64]) -> Result<Vec<f64>> {
        if unit.len() != space.dimension() {
            return Err(Error::Shape("point does not match the space".into()));
        }
        // (native value, index in the space if tuned)
        let read = |name: &str| -> Result<(f64, Option<usize>)> {
            match space.index_of(name) {
                Some(d) => {
                    let p = &space.params()[d];
                    if !p.is_numeric() {
                        return Err(Error::Schema(format!("{name} must be numeric")));
                    }
                    Ok((p.unit_to_numeric(unit[d]), Some(d)))
                }
                None => self
                    .fixed
                    .get(name)
                    .map(|v| (*v, None))
                    .ok_or_else(|| Error::Schema(format!("resource function needs {name}"))),
            }
        };
        let (i, di) = read(INSTANCES)?;
        let (c, dc) = read(CORES)?;
        let (m, dm) = read(MEMORY)?;
        let mut g = vec![0.0; unit.len()];
        for (d, partial) in [(di, c + self.c * m), (dc, i), (dm, self.c * i)] {
            if let Some(d) = d {
                g[d] += partial * space.params()[d].unit_jacobian(unit[d]);
            }
        }
        Ok(g)
    }
}

/// Upper bound on a metric; without `max` the bound is twice the value of
/// the first successful run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstraintDef {
    pub metric: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

/// The task definition document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskDefinition {
    pub task_id: String,
    pub space_ref: String,
    pub beta: f64,
    #[serde(default)]
    pub constraints: Vec<ConstraintDef>,
    pub budget: u64,
    #[serde(default)]
    pub seed: u64,
    pub resource_function: ResourceFunctionSpec,
}

impl TaskDefinition {
    pub fn from_json(text: &str) -> Result<Self> {
        let def: TaskDefinition = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        def.validate()?;
        Ok(def)
    }

    /// Checks ranges; the message starts with the offending field.
    pub fn validate(&self) -> Result<()> {
        let id_ok = !self.task_id.is_empty()
            && self.task_id.len() <= 128
            && self
                .task_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
            && !self.task_id.starts_with('.');
        if !id_ok {
            return Err(Error::Schema(
                "task_id: use 1-128 letters, digits, '-', '_' or '.' (not leading)".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return Err(Error::Schema(format!("beta: {} outside [0,1]", self.beta)));
        }
        if self.budget < 1 {
            return Err(Error::Schema("budget: must be at least 1".into()));
        }
        for (i, c) in self.constraints.iter().enumerate() {
            if c.metric.is_empty() {
                return Err(Error::Schema(format!("constraints[{i}].metric: empty")));
            }
            if let Some(m) = c.max {
                if !(m > 0.0 && m.is_finite()) {
                    return Err(Error::Schema(format!("constraints[{i}].max: must be positive")));
                }
            }
        }
        self.resource_function.validate()
    }
}
