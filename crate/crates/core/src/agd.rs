//! Approximate gradient descent on the objective.
//!
//! The runtime gradient comes from central differences of the runtime
//! surrogate's mean, the resource gradient from the analytic resource
//! function, and the two are combined by the chain rule of `T^β R^(1−β)`.
//! Everything happens in normalized coordinates.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::Context;
use crate::space::{Configuration, ConfigurationSpace, Domain};
use crate::surrogate::Surrogate;

/// Smallest move of a real knob, in normalized units, that counts as a step.
pub const MIN_STEP: f64 = 1.0 / 64.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgdConfig {
    pub eta: f64,
    /// Every `period`-th iteration is a gradient step.
    pub period: usize,
    /// Finite-difference half width in normalized units.
    pub eps: f64,
    /// How often η may double when a step does not visibly leave its start.
    pub max_doublings: u32,
}

impl Default for AgdConfig {
    fn default() -> Self {
        AgdConfig { eta: 0.001, period: 5, eps: 0.01, max_doublings: 3 }
    }
}

impl AgdConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) || !(self.eps > 0.0) || self.period < 2 {
            return Err(Error::Argument("AGD needs eta > 0, eps > 0 and period >= 2".into()));
        }
        Ok(())
    }
}

/// A resource function with a closed-form gradient.
pub trait ResourceFunction: Send + Sync {
    fn evaluate(&self, config: &Configuration) -> Result<f64>;

    /// Gradient with respect to the normalized coordinates at `unit`,
    /// taken through the continuous (unrounded) inverse transform.
    fn unit_gradient(&self, space: &ConfigurationSpace, unit: &[f64]) -> Result<Vec<f64>>;
}

/// Central-difference gradient of the surrogate mean over numeric
/// dimensions; categorical dimensions get 0.
pub fn approx_runtime_gradient(
    model: &dyn Surrogate,
    space: &ConfigurationSpace,
    unit: &[f64],
    context: &Context,
    cfg: &AgdConfig,
) -> Result<Vec<f64>> {
    if unit.len() != space.dimension() {
        return Err(Error::Shape(format!(
            "point of length {} for a {}-dimensional space",
            unit.len(),
            space.dimension()
        )));
    }
    let mut grad = vec![0.0; unit.len()];
    for (d, p) in space.params().iter().enumerate() {
        if !p.is_numeric() {
            continue;
        }
        let hi = (unit[d] + cfg.eps).min(1.0);
        let lo = (unit[d] - cfg.eps).max(0.0);
        if hi <= lo {
            continue;
        }
        let mut x = unit.to_vec();
        x[d] = hi;
        let up = model.predict(&x, context)?.mean;
        x[d] = lo;
        let down = model.predict(&x, context)?.mean;
        grad[d] = (up - down) / (hi - lo);
    }
    Ok(grad)
}

/// Chain rule for `f = T^β R^(1−β)`:
/// `∂f = β (T/R)^(β−1) ∂T + (1−β) (T/R)^β ∂R`.
pub fn objective_gradient(t: f64, r: f64, grad_t: &[f64], grad_r: &[f64], beta: f64) -> Result<Vec<f64>> {
    if !(t > 0.0) || !(r > 0.0) {
        return Err(Error::Domain(format!("runtime {t} and resource {r} must be positive")));
    }
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::Domain(format!("beta {beta} outside [0,1]")));
    }
    if grad_t.len() != grad_r.len() {
        return Err(Error::Shape("gradient lengths differ".into()));
    }
    if beta == 1.0 {
        return Ok(grad_t.to_vec());
    }
    if beta == 0.0 {
        return Ok(grad_r.to_vec());
    }
    let ratio = t / r;
    let a = beta * ratio.powf(beta - 1.0);
    let b = (1.0 - beta) * ratio.powf(beta);
    Ok(grad_t.iter().zip(grad_r).map(|(gt, gr)| a * gt + b * gr).collect())
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgdOutcome {
    pub configuration: Configuration,
    pub gradient: Vec<f64>,
    /// The plain step never left the start point, so a single grid step
    /// along the steepest dimension was taken instead.
    pub escaped: bool,
}

/// One descent step from `best`.
///
/// `observed_runtime` stands in for the surrogate's runtime when the latter
/// is not positive at `best` (possible far from data). With `beta = 1` the
/// resource function is never called.
#[allow(clippy::too_many_arguments)]
pub fn agd_step(
    space: &ConfigurationSpace,
    best: &Configuration,
    context: &Context,
    runtime_model: &dyn Surrogate,
    resource: &dyn ResourceFunction,
    beta: f64,
    cfg: &AgdConfig,
    observed_runtime: f64,
) -> Result<AgdOutcome> {
    cfg.validate()?;
    let best = space.validate(best)?;
    let unit = space.normalize(&best)?;
    let grad_t = approx_runtime_gradient(runtime_model, space, &unit, context, cfg)?;
    let gradient = if beta == 1.0 {
        grad_t
    } else {
        let predicted = runtime_model.predict(&unit, context)?.mean;
        let t = if predicted > 0.0 { predicted } else { observed_runtime };
        let r = resource.evaluate(&best)?;
        let grad_r = resource.unit_gradient(space, &unit)?;
        objective_gradient(t, r, &grad_t, &grad_r, beta)?
    };

    let numeric: Vec<usize> = (0..space.dimension()).filter(|&d| space.params()[d].is_numeric()).collect();
    let mut eta = cfg.eta;
    for _ in 0..=cfg.max_doublings {
        let mut next = unit.clone();
        for &d in &numeric {
            next[d] = (unit[d] - eta * gradient[d]).clamp(0.0, 1.0);
        }
        let config = space.denormalize(&next)?;
        // a real knob nudged by a hair would just replay the incumbent
        let visible = numeric.iter().any(|&d| match space.params()[d].domain() {
            Domain::Real { .. } => (next[d] - unit[d]).abs() >= MIN_STEP,
            _ => config.get(space.params()[d].name()) != best.get(space.params()[d].name()),
        });
        if visible {
            return Ok(AgdOutcome { configuration: config, gradient, escaped: false });
        }
        eta *= 2.0;
    }

    // steepest numeric dimension, lowest index on ties
    let mut steepest: Option<usize> = None;
    for &d in &numeric {
        if steepest.is_none_or(|s| gradient[d].abs() > gradient[s].abs()) {
            steepest = Some(d);
        }
    }
    let Some(d) = steepest else {
        return Ok(AgdOutcome { configuration: best, gradient, escaped: true });
    };
    let param = &space.params()[d];
    let downhill = gradient[d] <= 0.0;
    let moved = param
        .neighbor_unit(unit[d], downhill, MIN_STEP)
        .or_else(|| param.neighbor_unit(unit[d], !downhill, MIN_STEP));
    let mut next = unit.clone();
    if let Some(u) = moved {
        next[d] = u;
    }
    Ok(AgdOutcome { configuration: space.denormalize(&next)?, gradient, escaped: true })
}
