use std::sync::Arc;

use super::model::GpSurrogate;
use super::{Prediction, Surrogate};
use crate::error::{Error, Result};
use crate::history::Context;

/// Weighted combination of surrogates:
/// `μ = Σ wᵢ μᵢ`, `σ² = Σ wᵢ² σᵢ²`, with weights normalized to sum to one.
#[derive(Clone)]
pub struct EnsembleSurrogate {
    members: Vec<(Arc<dyn Surrogate>, f64)>,
}

impl std::fmt::Debug for EnsembleSurrogate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("EnsembleSurrogate")
            .field("weights", &self.weights())
            .finish()
    }
}

impl EnsembleSurrogate {
    /// `base` are models from previous tasks; `current` is the model of the
    /// task being tuned. If every weight is zero the members share equally.
    pub fn new(
        base: Vec<(Arc<dyn Surrogate>, f64)>,
        current: Option<(Arc<dyn Surrogate>, f64)>,
    ) -> Result<Self> {
        let mut members = base;
        members.extend(current);
        if members.is_empty() {
            return Err(Error::State("ensemble has no models".into()));
        }
        if members.iter().any(|(_, w)| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::Argument("ensemble weights must be finite and >= 0".into()));
        }
        let total: f64 = members.iter().map(|(_, w)| w).sum();
        let n = members.len() as f64;
        for (_, w) in members.iter_mut() {
            *w = if total > 0.0 { *w / total } else { 1.0 / n };
        }
        Ok(EnsembleSurrogate { members })
    }

    pub fn weights(&self) -> Vec<f64> {
        self.members.iter().map(|(_, w)| *w).collect()
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }
}

impl Surrogate for EnsembleSurrogate {
    fn predict(&self, unit: &[f64], context: &Context) -> Result<Prediction> {
        if self.members.is_empty() {
            return Err(Error::State("ensemble has no models".into()));
        }
        let (mut mean, mut variance) = (0.0, 0.0);
        for (m, w) in &self.members {
            let p = m.predict(unit, context)?;
            mean += w * p.mean;
            variance += w * w * p.variance;
        }
        Ok(Prediction { mean, variance })
    }
}

/// Expresses a model from another task in this task's target units by
/// matching standardized scores: `μ' = m + s·zᵢ`, `σ'² = s²·σ²_zᵢ`.
#[derive(Clone, Debug)]
pub struct Rescaled {
    inner: Arc<GpSurrogate>,
    mean: f64,
    scale: f64,
}

impl Rescaled {
    pub fn new(inner: Arc<GpSurrogate>, mean: f64, scale: f64) -> Self {
        Rescaled { inner, mean, scale }
    }
}

impl Surrogate for Rescaled {
    fn predict(&self, unit: &[f64], context: &Context) -> Result<Prediction> {
        let p = self.inner.predict_standardized(unit, context)?;
        Ok(Prediction {
            mean: self.mean + self.scale * p.mean,
            variance: p.variance * self.scale * self.scale,
        })
    }
}
