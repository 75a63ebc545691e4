//! Typed configuration spaces.
//!
//! Every parameter has a native domain (integer, real or categorical) and a
//! position on the unit interval. Kernels, candidate generation and the
//! gradient step all work on the unit cube; [`ConfigurationSpace::normalize`]
//! and [`ConfigurationSpace::denormalize`] are the only places where the two
//! representations meet.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling;

/// A native parameter value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Value {
    Int(i64),
    Real(f64),
    Choice(String),
}

impl Value {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Value::Int(v) => Some(*v as f64),
            Value::Real(v) => Some(*v),
            Value::Choice(_) => None,
        }
    }
}

impl fmt::Display for Value {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Value::Int(v) => write!(f, "{v}"),
            Value::Real(v) => write!(f, "{v}"),
            Value::Choice(v) => f.write_str(v),
        }
    }
}

impl From<i64> for Value {
    fn from(v: i64) -> Self {
        Value::Int(v)
    }
}

impl From<f64> for Value {
    fn from(v: f64) -> Self {
        Value::Real(v)
    }
}

impl From<&str> for Value {
    fn from(v: &str) -> Self {
        Value::Choice(v.to_owned())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ParameterKind {
    Integer,
    Real,
    Categorical,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Domain {
    Integer { low: i64, high: i64 },
    Real { low: f64, high: f64 },
    Categorical { choices: Vec<String> },
}

/// One tunable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterDef {
    name: String,
    domain: Domain,
    log_scale: bool,
    default: Value,
}

impl ParameterDef {
    pub fn integer(name: &str, low: i64, high: i64, default: i64) -> Result<Self> {
        Self::new(name, Domain::Integer { low, high }, false, Value::Int(default))
    }

    pub fn real(name: &str, low: f64, high: f64, default: f64) -> Result<Self> {
        Self::new(name, Domain::Real { low, high }, false, Value::Real(default))
    }

    pub fn categorical(name: &str, choices: &[&str], default: &str) -> Result<Self> {
        let choices = choices.iter().map(|c| (*c).to_owned()).collect();
        Self::new(
            name,
            Domain::Categorical { choices },
            false,
            Value::Choice(default.to_owned()),
        )
    }

    /// Marks a numeric parameter as log-scaled.
    pub fn log(mut self) -> Result<Self> {
        self.log_scale = true;
        self.validate()?;
        Ok(self)
    }

    pub fn new(name: &str, domain: Domain, log_scale: bool, default: Value) -> Result<Self> {
        let mut def = ParameterDef {
            name: name.to_owned(),
            domain,
            log_scale,
            default,
        };
        def.default = def.coerce(&def.default)?;
        def.validate()?;
        Ok(def)
    }

    fn validate(&self) -> Result<()> {
        if self.name.is_empty() {
            return Err(Error::Schema("parameter name must not be empty".into()));
        }
        match &self.domain {
            Domain::Integer { low, high } => {
                if low >= high {
                    return Err(Error::Schema(format!("{}: low must be < high", self.name)));
                }
                if self.log_scale && *low <= 0 {
                    return Err(Error::Schema(format!(
                        "{}: log_scale requires low > 0",
                        self.name
                    )));
                }
            }
            Domain::Real { low, high } => {
                if !(low.is_finite() && high.is_finite()) || low >= high {
                    return Err(Error::Schema(format!(
                        "{}: range must be finite with low < high",
                        self.name
                    )));
                }
                if self.log_scale && *low <= 0.0 {
                    return Err(Error::Schema(format!(
                        "{}: log_scale requires low > 0",
                        self.name
                    )));
                }
            }
            Domain::Categorical { choices } => {
                if choices.is_empty() {
                    return Err(Error::Schema(format!("{}: empty choice list", self.name)));
                }
                if self.log_scale {
                    return Err(Error::Schema(format!(
                        "{}: log_scale is only valid for numeric parameters",
                        self.name
                    )));
                }
                let unique: HashSet<&String> = choices.iter().collect();
                if unique.len() != choices.len() {
                    return Err(Error::Schema(format!("{}: duplicate choices", self.name)));
                }
            }
        }
        self.check(&self.default)
            .map_err(|e| Error::Schema(format!("default: {e}")))
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn domain(&self) -> &Domain {
        &self.domain
    }

    pub fn kind(&self) -> ParameterKind {
        match self.domain {
            Domain::Integer { .. } => ParameterKind::Integer,
            Domain::Real { .. } => ParameterKind::Real,
            Domain::Categorical { .. } => ParameterKind::Categorical,
        }
    }

    pub fn is_numeric(&self) -> bool {
        self.kind() != ParameterKind::Categorical
    }

    pub fn log_scale(&self) -> bool {
        self.log_scale
    }

    pub fn default_value(&self) -> &Value {
        &self.default
    }

    /// Converts a loosely typed value (for example an integer literal given
    /// for a real parameter) into the parameter's canonical representation.
    pub fn coerce(&self, value: &Value) -> Result<Value> {
        match (&self.domain, value) {
            (Domain::Integer { .. }, Value::Int(v)) => Ok(Value::Int(*v)),
            (Domain::Integer { .. }, Value::Real(v)) if v.fract() == 0.0 && v.is_finite() => {
                Ok(Value::Int(*v as i64))
            }
            (Domain::Real { .. }, Value::Real(v)) => Ok(Value::Real(*v)),
            (Domain::Real { .. }, Value::Int(v)) => Ok(Value::Real(*v as f64)),
            (Domain::Categorical { .. }, Value::Choice(c)) => Ok(Value::Choice(c.clone())),
            _ => Err(Error::Domain(format!(
                "{}: value {value} has the wrong type",
                self.name
            ))),
        }
    }

    /// Checks that a value lies in the parameter's domain.
    pub fn check(&self, value: &Value) -> Result<()> {
        let out = || Error::Domain(format!("{}: value {value} outside domain", self.name));
        match (&self.domain, value) {
            (Domain::Integer { low, high }, Value::Int(v)) => {
                if v < low || v > high {
                    return Err(out());
                }
            }
            (Domain::Real { low, high }, Value::Real(v)) => {
                if !v.is_finite() || v < low || v > high {
                    return Err(out());
                }
            }
            (Domain::Categorical { choices }, Value::Choice(c)) => {
                if !choices.contains(c) {
                    return Err(out());
                }
            }
            _ => {
                return Err(Error::Domain(format!(
                    "{}: value {value} has the wrong type",
                    self.name
                )))
            }
        }
        Ok(())
    }

    fn bounds(&self) -> (f64, f64) {
        match &self.domain {
            Domain::Integer { low, high } => (*low as f64, *high as f64),
            Domain::Real { low, high } => (*low, *high),
            Domain::Categorical { choices } => (0.0, (choices.len() - 1) as f64),
        }
    }

    /// Maps a valid native value to the unit interval.
    pub fn to_unit(&self, value: &Value) -> Result<f64> {
        self.check(value)?;
        match (&self.domain, value) {
            (Domain::Categorical { choices }, Value::Choice(c)) => {
                if choices.len() == 1 {
                    return Ok(0.0);
                }
                let idx = choices.iter().position(|x| x == c).unwrap_or(0);
                Ok(idx as f64 / (choices.len() - 1) as f64)
            }
            _ => {
                let v = value.as_f64().unwrap_or(0.0);
                Ok(self.numeric_to_unit(v))
            }
        }
    }

    /// Continuous (unrounded) map from a native number to the unit interval.
    pub fn numeric_to_unit(&self, v: f64) -> f64 {
        let (lo, hi) = self.bounds();
        let u = if self.log_scale {
            (v.ln() - lo.ln()) / (hi.ln() - lo.ln())
        } else {
            (v - lo) / (hi - lo)
        };
        u.clamp(0.0, 1.0)
    }

    /// Continuous (unrounded) map from the unit interval to a native number.
    pub fn unit_to_numeric(&self, u: f64) -> f64 {
        let (lo, hi) = self.bounds();
        // endpoints exactly, whatever the rounding of the log map
        if u <= 0.0 {
            return lo;
        }
        if u >= 1.0 {
            return hi;
        }
        let v = if self.log_scale {
            (lo.ln() + u * (hi.ln() - lo.ln())).exp()
        } else {
            lo + u * (hi - lo)
        };
        v.clamp(lo, hi)
    }

    /// Derivative of [`Self::unit_to_numeric`] with respect to the unit coordinate.
    pub fn unit_jacobian(&self, u: f64) -> f64 {
        let (lo, hi) = self.bounds();
        if self.log_scale {
            self.unit_to_numeric(u) * (hi.ln() - lo.ln())
        } else {
            hi - lo
        }
    }

    /// Maps a unit coordinate back to a native value, rounding integers and
    /// categorical indices half away from zero.
    pub fn from_unit(&self, u: f64) -> Result<Value> {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::Domain(format!(
                "{}: normalized component {u} outside [0,1]",
                self.name
            )));
        }
        Ok(match &self.domain {
            Domain::Integer { low, high } => {
                let v = self.unit_to_numeric(u).round() as i64;
                Value::Int(v.clamp(*low, *high))
            }
            Domain::Real { .. } => Value::Real(self.unit_to_numeric(u)),
            Domain::Categorical { choices } => {
                let idx = (u * (choices.len() - 1) as f64).round() as usize;
                Value::Choice(choices[idx.min(choices.len() - 1)].clone())
            }
        })
    }

    /// Smallest unit-coordinate move from `u` that changes the rounded value,
    /// in the given direction. Real parameters use `real_step`.
    pub fn neighbor_unit(&self, u: f64, up: bool, real_step: f64) -> Option<f64> {
        let next = match &self.domain {
            Domain::Real { .. } => {
                if up {
                    u + real_step
                } else {
                    u - real_step
                }
            }
            Domain::Integer { low, high } => {
                let cur = self.unit_to_numeric(u).round() as i64;
                let target = if up { cur + 1 } else { cur - 1 };
                if target < *low || target > *high {
                    return None;
                }
                self.numeric_to_unit(target as f64)
            }
            Domain::Categorical { choices } => {
                let n = choices.len();
                if n == 1 {
                    return None;
                }
                let cur = (u * (n - 1) as f64).round() as i64;
                let target = if up { cur + 1 } else { cur - 1 };
                if target < 0 || target >= n as i64 {
                    return None;
                }
                target as f64 / (n - 1) as f64
            }
        };
        if (0.0..=1.0).contains(&next) {
            Some(next)
        } else if matches!(self.domain, Domain::Real { .. }) {
            let clamped = next.clamp(0.0, 1.0);
            (clamped != u).then_some(clamped)
        } else {
            None
        }
    }
}

/// A complete assignment of native values, keyed by parameter name.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Configuration(pub BTreeMap<String, Value>);

impl Configuration {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: impl Into<Value>) -> Self {
        self.0.insert(name.to_owned(), value.into());
        self
    }

    pub fn get(&self, name: &str) -> Option<&Value> {
        self.0.get(name)
    }

    pub fn insert(&mut self, name: &str, value: Value) {
        self.0.insert(name.to_owned(), value);
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Value)> {
        self.0.iter()
    }
}

impl fmt::Display for Configuration {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("{")?;
        for (i, (k, v)) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(", ")?;
            }
            write!(f, "{k}={v}")?;
        }
        f.write_str("}")
    }
}

/// An ordered list of parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigurationSpace {
    params: Vec<ParameterDef>,
    prior_ranking: Vec<String>,
}

impl ConfigurationSpace {
    pub fn new(params: Vec<ParameterDef>) -> Result<Self> {
        let ranking = params.iter().map(|p| p.name.clone()).collect();
        Self::with_prior_ranking(params, ranking)
    }

    /// Builds a space with an expert ranking used before any importance
    /// estimate exists. Parameters missing from `ranking` are appended in
    /// definition order.
    pub fn with_prior_ranking(params: Vec<ParameterDef>, ranking: Vec<String>) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::Schema("space has no parameters".into()));
        }
        let mut seen = HashSet::new();
        for p in &params {
            if !seen.insert(p.name.clone()) {
                return Err(Error::Schema(format!("duplicate parameter name {}", p.name)));
            }
        }
        let mut ranked = Vec::with_capacity(params.len());
        let mut used = HashSet::new();
        for name in ranking {
            if !seen.contains(&name) {
                return Err(Error::Schema(format!(
                    "prior_ranking names unknown parameter {name}"
                )));
            }
            if used.insert(name.clone()) {
                ranked.push(name);
            }
        }
        for p in &params {
            if used.insert(p.name.clone()) {
                ranked.push(p.name.clone());
            }
        }
        Ok(ConfigurationSpace {
            params,
            prior_ranking: ranked,
        })
    }

    pub fn dimension(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[ParameterDef] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParameterDef> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.params.iter().position(|p| p.name == name)
    }

    pub fn names(&self) -> Vec<String> {
        self.params.iter().map(|p| p.name.clone()).collect()
    }

    pub fn prior_ranking(&self) -> &[String] {
        &self.prior_ranking
    }

    pub fn default_configuration(&self) -> Configuration {
        Configuration(
            self.params
                .iter()
                .map(|p| (p.name.clone(), p.default.clone()))
                .collect(),
        )
    }

    /// Validates a configuration, coercing loosely typed numbers.
    pub fn validate(&self, config: &Configuration) -> Result<Configuration> {
        let mut out = BTreeMap::new();
        for p in &self.params {
            let v = config
                .get(&p.name)
                .ok_or_else(|| Error::Domain(format!("{}: missing value", p.name)))?;
            let v = p.coerce(v)?;
            p.check(&v)?;
            out.insert(p.name.clone(), v);
        }
        if config.len() != self.params.len() {
            let extra: Vec<_> = config
                .0
                .keys()
                .filter(|k| self.param(k).is_none())
                .cloned()
                .collect();
            return Err(Error::Domain(format!("unknown parameters {extra:?}")));
        }
        Ok(Configuration(out))
    }

    /// Maps a valid configuration onto the unit cube.
    pub fn normalize(&self, config: &Configuration) -> Result<Vec<f64>> {
        self.params
            .iter()
            .map(|p| {
                let v = config
                    .get(&p.name)
                    .ok_or_else(|| Error::Domain(format!("{}: missing value", p.name)))?;
                p.to_unit(&p.coerce(v)?)
            })
            .collect()
    }

    /// Inverse of [`Self::normalize`] up to integer/categorical rounding.
    pub fn denormalize(&self, unit: &[f64]) -> Result<Configuration> {
        if unit.len() != self.params.len() {
            return Err(Error::Shape(format!(
                "vector has {} components, space has {}",
                unit.len(),
                self.params.len()
            )));
        }
        let mut out = BTreeMap::new();
        for (p, &u) in self.params.iter().zip(unit) {
            out.insert(p.name.clone(), p.from_unit(u)?);
        }
        Ok(Configuration(out))
    }

    /// Rounds a unit vector to the representable grid (denormalize then normalize).
    pub fn snap(&self, unit: &[f64]) -> Result<Vec<f64>> {
        let c = self.denormalize(unit)?;
        self.normalize(&c)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: SpaceDocument =
            serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        doc.try_into()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SpaceDocument::from(self)).expect("space serializes")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// A restriction of a space to its `K` most important parameters; the rest
/// are pinned to the anchor configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct SubSpace {
    members: Vec<String>,
    anchor: Configuration,
}

impl SubSpace {
    pub fn new(space: &ConfigurationSpace, members: Vec<String>, anchor: Configuration) -> Result<Self> {
        let anchor = space.validate(&anchor)?;
        let mut seen = HashSet::new();
        for m in &members {
            if space.param(m).is_none() {
                return Err(Error::Shape(format!("unknown sub-space member {m}")));
            }
            if !seen.insert(m) {
                return Err(Error::Shape(format!("duplicate sub-space member {m}")));
            }
        }
        Ok(SubSpace { members, anchor })
    }

    /// The whole space, anchored at `anchor`.
    pub fn full(space: &ConfigurationSpace, anchor: Configuration) -> Result<Self> {
        Self::new(space, space.names(), anchor)
    }

    pub fn members(&self) -> &[String] {
        &self.members
    }

    pub fn size(&self) -> usize {
        self.members.len()
    }

    pub fn anchor(&self) -> &Configuration {
        &self.anchor
    }

    /// Positions of the members in the parent space, in member order.
    pub fn member_indices(&self, space: &ConfigurationSpace) -> Vec<usize> {
        self.members
            .iter()
            .filter_map(|m| space.index_of(m))
            .collect()
    }

    /// Completes an assignment of the member parameters with anchor values.
    pub fn lift(&self, sub_config: &Configuration) -> Result<Configuration> {
        if sub_config.len() != self.members.len() {
            return Err(Error::Shape(format!(
                "expected {} member values, got {}",
                self.members.len(),
                sub_config.len()
            )));
        }
        let mut out = self.anchor.clone();
        for m in &self.members {
            let v = sub_config
                .get(m)
                .ok_or_else(|| Error::Shape(format!("missing member {m}")))?;
            out.insert(m, v.clone());
        }
        Ok(out)
    }

    /// Unit-cube version of [`Self::lift`]: writes `sub_unit` (member order)
    /// into a copy of the anchor's normalized vector.
    pub fn lift_unit(&self, space: &ConfigurationSpace, sub_unit: &[f64]) -> Result<Vec<f64>> {
        let idx = self.member_indices(space);
        if sub_unit.len() != idx.len() {
            return Err(Error::Shape(format!(
                "expected {} member components, got {}",
                idx.len(),
                sub_unit.len()
            )));
        }
        let mut full = space.normalize(&self.anchor)?;
        for (&i, &u) in idx.iter().zip(sub_unit) {
            full[i] = u;
        }
        Ok(full)
    }
}

/// Draws `n` configurations from a scrambled low-discrepancy sequence.
pub fn sample_low_discrepancy(
    space: &ConfigurationSpace,
    n: usize,
    seed: u64,
) -> Result<Vec<Configuration>> {
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    sampling::scrambled_halton(space.dimension(), n, seed)
        .iter()
        .map(|u| space.denormalize(u))
        .collect()
}

// ---- file format ----

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpaceDocument {
    parameters: Vec<ParameterDocument>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    prior_ranking: Option<Vec<String>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ParameterDocument {
    name: String,
    kind: ParameterKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    range: Option<[Value; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choices: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    log_scale: bool,
    default: Value,
}

impl TryFrom<SpaceDocument> for ConfigurationSpace {
    type Error = Error;

    fn try_from(doc: SpaceDocument) -> Result<Self> {
        let mut params = Vec::with_capacity(doc.parameters.len());
        for (i, p) in doc.parameters.into_iter().enumerate() {
            let at = |msg: &str| Error::Schema(format!("parameters[{i}] ({}): {msg}", p.name));
            let domain = match p.kind {
                ParameterKind::Categorical => {
                    if p.range.is_some() {
                        return Err(at("categorical parameters take `choices`, not `range`"));
                    }
                    let choices = p.choices.clone().ok_or_else(|| at("missing `choices`"))?;
                    Domain::Categorical { choices }
                }
                ParameterKind::Integer => {
                    if p.choices.is_some() {
                        return Err(at("numeric parameters take `range`, not `choices`"));
                    }
                    let [lo, hi] = p.range.clone().ok_or_else(|| at("missing `range`"))?;
                    match (lo, hi) {
                        (Value::Int(low), Value::Int(high)) => Domain::Integer { low, high },
                        _ => return Err(at("integer range must hold integers")),
                    }
                }
                ParameterKind::Real => {
                    if p.choices.is_some() {
                        return Err(at("numeric parameters take `range`, not `choices`"));
                    }
                    let [lo, hi] = p.range.clone().ok_or_else(|| at("missing `range`"))?;
                    match (lo.as_f64(), hi.as_f64()) {
                        (Some(low), Some(high)) => Domain::Real { low, high },
                        _ => return Err(at("real range must hold numbers")),
                    }
                }
            };
            let def = ParameterDef::new(&p.name, domain, p.log_scale, p.default.clone())
                .map_err(|e| at(&e.to_string()))?;
            params.push(def);
        }
        match doc.prior_ranking {
            Some(r) => ConfigurationSpace::with_prior_ranking(params, r),
            None => ConfigurationSpace::new(params),
        }
    }
}

impl From<&ConfigurationSpace> for SpaceDocument {
    fn from(space: &ConfigurationSpace) -> Self {
        let parameters = space
            .params
            .iter()
            .map(|p| {
                let (range, choices) = match &p.domain {
                    Domain::Integer { low, high } => {
                        (Some([Value::Int(*low), Value::Int(*high)]), None)
                    }
                    Domain::Real { low, high } => {
                        (Some([Value::Real(*low), Value::Real(*high)]), None)
                    }
                    Domain::Categorical { choices } => (None, Some(choices.clone())),
                };
                ParameterDocument {
                    name: p.name.clone(),
                    kind: p.kind(),
                    range,
                    choices,
                    log_scale: p.log_scale,
                    default: p.default.clone(),
                }
            })
            .collect();
        SpaceDocument {
            parameters,
            prior_ranking: Some(space.prior_ranking.clone()),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mixed_space() -> ConfigurationSpace {
        ConfigurationSpace::new(vec![
            ParameterDef::real("r", 0.0, 100.0, 50.0).unwrap(),
            ParameterDef::integer("i", 1, 16, 4).unwrap().log().unwrap(),
            ParameterDef::integer("b", 0, 1, 0).unwrap(),
            ParameterDef::categorical("c", &["lz4", "snappy", "zstd"], "lz4").unwrap(),
            ParameterDef::real("l", 0.01, 10.0, 1.0).unwrap().log().unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn bounds_map_to_unit_ends() {
        let p = ParameterDef::real("r", 0.0, 100.0, 0.0).unwrap();
        assert_eq!(p.to_unit(&Value::Real(0.0)).unwrap(), 0.0);
        assert_eq!(p.to_unit(&Value::Real(100.0)).unwrap(), 1.0);
    }

    #[test]
    fn log_integer_midpoint() {
        let p = ParameterDef::integer("i", 1, 16, 4).unwrap().log().unwrap();
        let u = p.to_unit(&Value::Int(4)).unwrap();
        assert!((u - 0.5).abs() < 1e-15);
    }

    #[test]
    fn integer_rounding_rule() {
        let p = ParameterDef::integer("b", 0, 1, 0).unwrap();
        assert_eq!(p.from_unit(0.49).unwrap(), Value::Int(0));
        assert_eq!(p.from_unit(0.51).unwrap(), Value::Int(1));
        // half rounds away from zero
        assert_eq!(p.from_unit(0.5).unwrap(), Value::Int(1));
    }

    #[test]
    fn zeros_give_lower_bounds() {
        let s = mixed_space();
        let c = s.denormalize(&[0.0; 5]).unwrap();
        assert_eq!(c.get("r"), Some(&Value::Real(0.0)));
        assert_eq!(c.get("i"), Some(&Value::Int(1)));
        assert_eq!(c.get("c"), Some(&Value::Choice("lz4".into())));
        assert_eq!(c.get("l"), Some(&Value::Real(0.01)));
    }

    #[test]
    fn out_of_domain_names_parameter() {
        let s = mixed_space();
        let c = s.default_configuration().with("r", 101.0);
        match s.normalize(&c) {
            Err(Error::Domain(msg)) => assert!(msg.contains('r')),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            s.denormalize(&[0.0, 0.0, 0.0, 1.5, 0.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn single_choice_normalizes_to_zero() {
        let p = ParameterDef::categorical("c", &["only"], "only").unwrap();
        assert_eq!(p.to_unit(&Value::Choice("only".into())).unwrap(), 0.0);
    }

    #[test]
    fn invalid_definitions_rejected() {
        assert!(ParameterDef::integer("x", 3, 3, 3).is_err());
        assert!(ParameterDef::real("x", 0.0, 1.0, 0.5).unwrap().log().is_err());
        assert!(ParameterDef::real("x", 0.0, 1.0, 2.0).is_err());
        assert!(ParameterDef::categorical("x", &["a"], "b").is_err());
        let dup = ConfigurationSpace::new(vec![
            ParameterDef::real("x", 0.0, 1.0, 0.5).unwrap(),
            ParameterDef::real("x", 0.0, 2.0, 0.5).unwrap(),
        ]);
        assert!(dup.is_err());
    }

    #[test]
    fn lift_substitutes_members() {
        let s = ConfigurationSpace::new(vec![
            ParameterDef::integer("a", 0, 10, 1).unwrap(),
            ParameterDef::integer("b", 0, 10, 2).unwrap(),
        ])
        .unwrap();
        let anchor = Configuration::new().with("a", 1i64).with("b", 2i64);
        let sub = SubSpace::new(&s, vec!["a".into()], anchor.clone()).unwrap();
        let lifted = sub.lift(&Configuration::new().with("a", 5i64)).unwrap();
        assert_eq!(lifted, Configuration::new().with("a", 5i64).with("b", 2i64));

        let empty = SubSpace::new(&s, vec![], anchor.clone()).unwrap();
        assert_eq!(empty.lift(&Configuration::new()).unwrap(), anchor);

        let full = SubSpace::full(&s, anchor.clone()).unwrap();
        let c = Configuration::new().with("a", 7i64).with("b", 9i64);
        assert_eq!(full.lift(&c).unwrap(), c);

        assert!(matches!(
            sub.lift(&Configuration::new().with("a", 5i64).with("b", 3i64)),
            Err(Error::Shape(_))
        ));
        assert!(matches!(
            sub.lift(&Configuration::new().with("b", 5i64)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn low_discrepancy_contract() {
        let s = mixed_space();
        assert!(matches!(
            sample_low_discrepancy(&s, 0, 1),
            Err(Error::Argument(_))
        ));
        let one = sample_low_discrepancy(&s, 1, 3).unwrap();
        assert_eq!(one.len(), 1);
        s.validate(&one[0]).unwrap();
        let a = sample_low_discrepancy(&s, 20, 9).unwrap();
        let b = sample_low_discrepancy(&s, 20, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn file_round_trip_is_exact() {
        let s = ConfigurationSpace::with_prior_ranking(
            mixed_space().params().to_vec(),
            vec!["c".into(), "r".into()],
        )
        .unwrap();
        let text = s.to_json();
        let back = ConfigurationSpace::from_json(&text).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.prior_ranking()[0], "c");
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn unknown_fields_rejected() {
        let bad = r#"{"parameters":[{"name":"x","kind":"real","range":[0,1],"default":0.5,"step":1}]}"#;
        assert!(matches!(ConfigurationSpace::from_json(bad), Err(Error::Schema(_))));
        let bad_top = r#"{"parameters":[],"extra":1}"#;
        assert!(ConfigurationSpace::from_json(bad_top).is_err());
        let wrong_kind = r#"{"parameters":[{"name":"x","kind":"integer","range":[0,1.5],"default":0}]}"#;
        assert!(ConfigurationSpace::from_json(wrong_kind).is_err());
    }

    fn arb_config() -> impl Strategy<Value = Configuration> {
        (0.0..=100.0f64, 1i64..=16, 0i64..=1, 0usize..3, 0.01..=10.0f64).prop_map(
            |(r, i, b, c, l)| {
                Configuration::new()
                    .with("r", r)
                    .with("i", i)
                    .with("b", b)
                    .with("c", ["lz4", "snappy", "zstd"][c])
                    .with("l", l)
            },
        )
    }

    proptest! {
        #[test]
        fn round_trip(c in arb_config()) {
            let s = mixed_space();
            let u = s.normalize(&c).unwrap();
            prop_assert!(u.iter().all(|x| (0.0..=1.0).contains(x)));
            let back = s.denormalize(&u).unwrap();
            for p in s.params() {
                let (a, b) = (c.get(p.name()).unwrap(), back.get(p.name()).unwrap());
                match (a, b) {
                    // reals pass through ln/exp or an affine map; equal up to round-off
                    (Value::Real(x), Value::Real(y)) => prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0)),
                    _ => prop_assert_eq!(a, b),
                }
            }
        }

        #[test]
        fn monotone_numeric(a in 0.0..=100.0f64, b in 0.0..=100.0f64) {
            let p = ParameterDef::real("r", 0.0, 100.0, 0.0).unwrap();
            let (ua, ub) = (p.to_unit(&Value::Real(a)).unwrap(), p.to_unit(&Value::Real(b)).unwrap());
            if a < b { prop_assert!(ua < ub); }
        }

        #[test]
        fn lift_stays_in_domain(u in proptest::collection::vec(0.0..=1.0f64, 2)) {
            let s = mixed_space();
            let sub = SubSpace::new(&s, vec!["i".into(), "c".into()], s.default_configuration()).unwrap();
            let full = sub.lift_unit(&s, &u).unwrap();
            let c = s.denormalize(&full).unwrap();
            prop_assert!(s.validate(&c).is_ok());
        }
    }
}
