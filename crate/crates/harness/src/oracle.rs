//! Exhaustive noise-free evaluation of a discretized space.

use otune_core::history::objective;
use otune_core::engine::ResourceFunctionSpec;
use otune_core::space::{Configuration, ConfigurationSpace, Domain, Value};
use otune_core::Error;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::simulator::{simulate_noiseless, SyntheticJobSpec};

pub const MAX_CELLS: usize = 1_000_000;

/// `metric ≤ max`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub metric: String,
    pub max: f64,
}

fn default_real_levels() -> usize {
    5
}

fn default_integer_levels() -> usize {
    16
}

/// How finely the oracle discretizes a space.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridOptions {
    /// Evenly spaced points per real parameter.
    #[serde(default = "default_real_levels")]
    pub real_levels: usize,
    /// Integer parameters with more values than this are thinned to this
    /// many evenly spaced (in normalized units) values.
    #[serde(default = "default_integer_levels")]
    pub integer_levels: usize,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions { real_levels: default_real_levels(), integer_levels: default_integer_levels() }
    }
}

fn levels(p: &otune_core::space::ParameterDef, n: usize) -> Result<Vec<Value>> {
    if n < 2 {
        return Err(Error::Argument("a grid needs at least 2 levels per axis".into()).into());
    }
    let mut out: Vec<Value> = Vec::with_capacity(n);
    for k in 0..n {
        let v = p.from_unit(k as f64 / (n - 1) as f64)?;
        if !out.contains(&v) {
            out.push(v);
        }
    }
    Ok(out)
}

/// Every cell of the space, first parameter varying slowest. Categorical
/// parameters contribute all their choices, integers all their values up
/// to the level cap, reals `real_levels` points.
pub fn grid(space: &ConfigurationSpace, opts: &GridOptions) -> Result<Vec<Configuration>> {
    let mut axes: Vec<Vec<Value>> = Vec::with_capacity(space.dimension());
    for p in space.params() {
        let axis: Vec<Value> = match p.domain() {
            Domain::Integer { low, high } if ((high - low) as u64) < opts.integer_levels as u64 => {
                (*low..=*high).map(Value::Int).collect()
            }
            Domain::Integer { .. } => levels(p, opts.integer_levels)?,
            Domain::Categorical { choices } => choices.iter().map(|c| Value::Choice(c.clone())).collect(),
            Domain::Real { .. } => levels(p, opts.real_levels)?,
        };
        axes.push(axis);
    }
    let cells = axes.iter().try_fold(1usize, |acc, a| acc.checked_mul(a.len()).filter(|n| *n <= MAX_CELLS));
    if cells.is_none() {
        return Err(Error::Argument(format!("grid exceeds {MAX_CELLS} cells")).into());
    }
    let mut out = vec![Configuration::new()];
    for (p, axis) in space.params().iter().zip(&axes) {
        out = out
            .into_iter()
            .flat_map(|c| {
                axis.iter().map(move |v| {
                    let mut next = c.clone();
                    next.insert(p.name(), v.clone());
                    next
                })
            })
            .collect();
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    /// Feasible minimizer, or the unconstrained one when nothing is feasible.
    pub best: Configuration,
    pub objective: f64,
    pub index: usize,
    /// Whether any cell satisfies the bounds.
    pub feasible: bool,
    pub feasibility: Vec<bool>,
    /// Per-cell objective; infinite for failed runs.
    pub objectives: Vec<f64>,
}

/// True optimum of `T^β R^(1−β)` over `cells` at `iteration`; ties go to
/// the lowest cell index.
pub fn brute_force_optimum(
    spec: &SyntheticJobSpec,
    cells: &[Configuration],
    beta: f64,
    bounds: &[Bound],
    iteration: u64,
    resource: &ResourceFunctionSpec,
) -> Result<OracleResult> {
    if cells.is_empty() {
        return Err(Error::Argument("empty grid".into()).into());
    }
    if cells.len() > MAX_CELLS {
        return Err(Error::Argument(format!("grid exceeds {MAX_CELLS} cells")).into());
    }
    let evaluated: Vec<(f64, bool)> = cells
        .par_iter()
        .map(|c| {
            let run = simulate_noiseless(spec, c, iteration, resource)?;
            if run.failed {
                return Ok((f64::INFINITY, false));
            }
            let f = objective(run.runtime, run.resource, beta)?;
            let ok = bounds.iter().all(|b| run.metric(&b.metric).is_some_and(|v| v <= b.max));
            Ok((f, ok))
        })
        .collect::<Result<_>>()?;
    let objectives: Vec<f64> = evaluated.iter().map(|e| e.0).collect();
    let feasibility: Vec<bool> = evaluated.iter().map(|e| e.1).collect();

    let argmin = |admit: &dyn Fn(usize) -> bool| {
        (0..cells.len())
            .filter(|&i| admit(i) && objectives[i].is_finite())
            .fold(None, |best: Option<usize>, i| match best {
                Some(b) if objectives[b] <= objectives[i] => Some(b),
                _ => Some(i),
            })
    };
    let (index, feasible) = match argmin(&|i| feasibility[i]) {
        Some(i) => (i, true),
        None => (
            argmin(&|_| true).ok_or_else(|| Error::Data("every grid cell failed".into()))?,
            false,
        ),
    };
    Ok(OracleResult {
        best: cells[index].clone(),
        objective: objectives[index],
        index,
        feasible,
        feasibility,
        objectives,
    })
}
