//! Expected improvement with constraints, safe regions and the
//! candidate-based maximizer used for every BO suggestion.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::Context;
use crate::sampling::scrambled_halton;
use crate::space::{Configuration, ConfigurationSpace, SubSpace};
use crate::stats::{norm_cdf, norm_pdf};
use crate::surrogate::{Prediction, Surrogate};

/// Upper-bound constraint `metric ≤ threshold`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub name: String,
    /// Metric modelled by the constraint's surrogate (`runtime`, `resource`, ...).
    pub metric: String,
    pub threshold: f64,
}

impl ConstraintSpec {
    pub fn new(metric: &str, threshold: f64) -> Result<Self> {
        if !threshold.is_finite() {
            return Err(Error::Argument(format!("{metric}: threshold must be finite")));
        }
        Ok(ConstraintSpec {
            name: format!("{metric}_max"),
            metric: metric.to_owned(),
            threshold,
        })
    }
}

/// Width of the optimistic bound `μ + γσ` used to decide safety.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SafetyConfig {
    gamma: f64,
}

impl SafetyConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::Argument(format!("gamma {gamma} outside (0,1]")));
        }
        Ok(SafetyConfig { gamma })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }
}

impl Default for SafetyConfig {
    fn default() -> Self {
        SafetyConfig { gamma: 1.0 }
    }
}

/// A constraint together with the surrogate of its metric.
#[derive(Clone, Copy)]
pub struct ConstraintModel<'a> {
    pub model: &'a dyn Surrogate,
    pub spec: &'a ConstraintSpec,
}

/// Closed-form expected improvement for minimization.
pub fn expected_improvement(mean: f64, variance: f64, y_best: f64) -> Result<f64> {
    if !(mean.is_finite() && variance.is_finite() && y_best.is_finite()) {
        return Err(Error::Argument(format!(
            "non-finite EI inputs (mean {mean}, variance {variance}, best {y_best})"
        )));
    }
    if variance < 0.0 {
        return Err(Error::Argument(format!("negative variance {variance}")));
    }
    let sigma = variance.sqrt();
    if sigma == 0.0 {
        return Ok((y_best - mean).max(0.0));
    }
    let g = (y_best - mean) / sigma;
    Ok((sigma * (g * norm_cdf(g) + norm_pdf(g))).max(0.0))
}

/// `Pr[metric ≤ threshold]` under a Gaussian prediction.
pub fn probability_below(pred: Prediction, threshold: f64) -> f64 {
    let sigma = pred.std_dev();
    if sigma == 0.0 {
        return if pred.mean <= threshold { 1.0 } else { 0.0 };
    }
    norm_cdf((threshold - pred.mean) / sigma)
}

pub fn feasibility_probability(
    model: &dyn Surrogate,
    unit: &[f64],
    context: &Context,
    threshold: f64,
) -> Result<f64> {
    Ok(probability_below(model.predict(unit, context)?, threshold))
}

/// EI multiplied by the feasibility probability of every constraint.
pub fn eic(
    unit: &[f64],
    context: &Context,
    objective: &dyn Surrogate,
    constraints: &[ConstraintModel<'_>],
    y_best: f64,
) -> Result<f64> {
    let p = objective.predict(unit, context)?;
    let mut value = expected_improvement(p.mean, p.variance, y_best)?;
    for c in constraints {
        value *= feasibility_probability(c.model, unit, context, c.spec.threshold)?;
    }
    Ok(value)
}

pub fn upper_bound(mean: f64, variance: f64, cfg: &SafetyConfig) -> f64 {
    mean + cfg.gamma * variance.max(0.0).sqrt()
}

/// True when the optimistic bound of every constraint stays at or below its threshold.
pub fn is_safe(
    unit: &[f64],
    context: &Context,
    constraints: &[ConstraintModel<'_>],
    cfg: &SafetyConfig,
) -> Result<bool> {
    for c in constraints {
        let p = c.model.predict(unit, context)?;
        if upper_bound(p.mean, p.variance, cfg) > c.spec.threshold {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Candidate search settings.
#[derive(Clone, Debug, PartialEq)]
pub struct AcquisitionOptions {
    pub candidates: usize,
    pub refine_starts: usize,
    pub refine_steps: usize,
    /// Coordinate step for real parameters, in normalized units.
    pub real_step: f64,
    /// `None` disables safe-region filtering.
    pub safety: Option<SafetyConfig>,
}

impl Default for AcquisitionOptions {
    fn default() -> Self {
        AcquisitionOptions {
            candidates: 2000,
            refine_starts: 5,
            refine_steps: 10,
            real_step: 1.0 / 64.0,
            safety: Some(SafetyConfig::default()),
        }
    }
}

/// Result of [`maximize_eic`].
#[derive(Clone, Debug, PartialEq)]
pub struct Proposal {
    pub configuration: Configuration,
    pub unit: Vec<f64>,
    pub eic: f64,
    /// Inside the safe region (always true when safety is disabled).
    pub safe: bool,
    /// No safe candidate existed; this is the least-violating one.
    pub fallback: bool,
}

#[derive(Clone, Debug)]
struct Scored {
    unit: Vec<f64>,
    eic: f64,
    violation: f64,
    safe: bool,
    excluded: bool,
}

fn score(
    unit: Vec<f64>,
    context: &Context,
    objective: &dyn Surrogate,
    constraints: &[ConstraintModel<'_>],
    y_best: f64,
    safety: Option<&SafetyConfig>,
    exclude: &[Vec<f64>],
) -> Result<Scored> {
    let value = eic(&unit, context, objective, constraints, y_best)?;
    let mut violation = 0.0;
    let mut safe = true;
    if let Some(cfg) = safety {
        for c in constraints {
            let p = c.model.predict(&unit, context)?;
            let u = upper_bound(p.mean, p.variance, cfg);
            if u > c.spec.threshold {
                safe = false;
                violation += u - c.spec.threshold;
            }
        }
    }
    let excluded = exclude.iter().any(|e| *e == unit);
    Ok(Scored {
        unit,
        eic: value,
        violation,
        safe,
        excluded,
    })
}

/// Maximizes EIC over the safe part of a sub-space.
///
/// Draws `candidates` low-discrepancy points over the member dimensions,
/// lifts them with the anchor, keeps the safe ones and refines the best few
/// coordinate-wise. Points equal to an entry of `exclude` (already evaluated
/// configurations) are skipped unless nothing else is left. When no
/// candidate is safe the one with the smallest total bound violation is
/// returned with `fallback` set.
#[allow(clippy::too_many_arguments)]
pub fn maximize_eic(
    space: &ConfigurationSpace,
    objective: &dyn Surrogate,
    constraints: &[ConstraintModel<'_>],
    region: &SubSpace,
    context: &Context,
    y_best: f64,
    opts: &AcquisitionOptions,
    seed: u64,
    exclude: &[Vec<f64>],
) -> Result<Proposal> {
    if opts.candidates == 0 {
        return Err(Error::Argument("at least one candidate required".into()));
    }
    let members = region.member_indices(space);
    let raw: Vec<Vec<f64>> = if members.is_empty() {
        vec![space.normalize(region.anchor())?]
    } else {
        scrambled_halton(members.len(), opts.candidates, seed)
            .iter()
            .map(|p| space.snap(&region.lift_unit(space, p)?))
            .collect::<Result<_>>()?
    };
    let safety = opts.safety.as_ref();
    let scored: Vec<Scored> = raw
        .into_par_iter()
        .map(|u| score(u, context, objective, constraints, y_best, safety, exclude))
        .collect::<Result<_>>()?;

    let fresh = scored.iter().any(|s| !s.excluded);
    let usable = |s: &Scored| !(fresh && s.excluded);
    let safe_idx: Vec<usize> = (0..scored.len())
        .filter(|&i| usable(&scored[i]) && scored[i].safe)
        .collect();

    if safe_idx.is_empty() {
        let best = (0..scored.len())
            .filter(|&i| usable(&scored[i]))
            .min_by(|&a, &b| scored[a].violation.total_cmp(&scored[b].violation).then(a.cmp(&b)))
            .expect("at least one candidate");
        let s = &scored[best];
        return Ok(Proposal {
            configuration: space.denormalize(&s.unit)?,
            unit: s.unit.clone(),
            eic: s.eic,
            safe: false,
            fallback: true,
        });
    }

    let mut order = safe_idx.clone();
    order.sort_by(|&a, &b| scored[b].eic.total_cmp(&scored[a].eic).then(a.cmp(&b)));
    let mut best = scored[order[0]].clone();

    for &start in order.iter().take(opts.refine_starts) {
        let mut cur = scored[start].clone();
        for _ in 0..opts.refine_steps {
            let mut moved = false;
            for &d in &members {
                let param = &space.params()[d];
                for up in [true, false] {
                    let Some(u) = param.neighbor_unit(cur.unit[d], up, opts.real_step) else {
                        continue;
                    };
                    let mut next = cur.unit.clone();
                    next[d] = u;
                    let next = space.snap(&next)?;
                    if next == cur.unit {
                        continue;
                    }
                    let s = score(next, context, objective, constraints, y_best, safety, exclude)?;
                    if s.safe && !(fresh && s.excluded) && s.eic > cur.eic {
                        cur = s;
                        moved = true;
                    }
                }
            }
            if !moved {
                break;
            }
        }
        if cur.eic > best.eic {
            best = cur;
        }
    }

    Ok(Proposal {
        configuration: space.denormalize(&best.unit)?,
        unit: best.unit,
        eic: best.eic,
        safe: true,
        fallback: false,
    })
}
