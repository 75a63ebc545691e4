//! Knowledge transfer between tuning tasks.
//!
//! Two tasks are close when their objective surrogates rank the same probe
//! configurations alike. A boosted-tree regressor learns that distance from
//! meta-feature pairs so a brand-new task can be compared to the archive
//! before it has any observations. Close tasks then supply warm-start
//! configurations and, weighted by `1 − distance`, ensemble members.

use std::cmp::Ordering;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{BoostingOptions, GradientBoosting};
use crate::history::{Context, Observation};
use crate::sampling::scrambled_halton;
use crate::space::{sample_low_discrepancy, Configuration, ConfigurationSpace};
use crate::stats::kendall_distance;
use crate::surrogate::{EnsembleSurrogate, FitOptions, GpSurrogate, Rescaled, Sample, Surrogate};

/// Number of configurations a warm start supplies.
pub const WARM_START_SIZE: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaFeatureVector {
    pub schema_id: String,
    pub values: Vec<f64>,
}

impl MetaFeatureVector {
    pub fn new(schema_id: &str, values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("meta-features must be finite".into()));
        }
        Ok(MetaFeatureVector { schema_id: schema_id.to_owned(), values })
    }
}

/// An archived task: its features, history and fitted objective surrogate.
#[derive(Clone, Debug)]
pub struct TaskRecord {
    pub task_id: String,
    pub meta_features: MetaFeatureVector,
    pub space: ConfigurationSpace,
    pub history: Vec<Observation>,
    /// Best configurations, feasible ones first, each group by objective.
    pub best_configs: Vec<Configuration>,
    surrogate: Arc<GpSurrogate>,
    target_mean: f64,
    target_scale: f64,
}

impl TaskRecord {
    /// Archives a history, fitting the objective surrogate on its usable observations.
    pub fn new(
        task_id: &str,
        meta_features: MetaFeatureVector,
        space: ConfigurationSpace,
        history: Vec<Observation>,
        seed: u64,
    ) -> Result<Self> {
        let samples: Vec<Sample> = history
            .iter()
            .filter(|o| o.is_usable())
            .map(|o| Sample::from_config(&space, &o.configuration, o.context.clone(), o.objective))
            .collect::<Result<_>>()?;
        if samples.is_empty() {
            return Err(Error::Data(format!("task {task_id} has no usable observations")));
        }
        let surrogate = GpSurrogate::fit(&space, &samples, &FitOptions::default().with_seed(seed))?;
        let mut ranked: Vec<&Observation> = history.iter().filter(|o| o.is_usable()).collect();
        ranked.sort_by(|a, b| b.feasible.cmp(&a.feasible).then(a.objective.total_cmp(&b.objective)));
        let mut best_configs: Vec<Configuration> = Vec::new();
        for o in ranked {
            if !best_configs.contains(&o.configuration) {
                best_configs.push(o.configuration.clone());
            }
        }
        Ok(TaskRecord {
            task_id: task_id.to_owned(),
            meta_features,
            space,
            history,
            best_configs,
            target_mean: surrogate.gp().target_mean(),
            target_scale: surrogate.gp().target_scale(),
            surrogate: Arc::new(surrogate),
        })
    }

    pub fn surrogate(&self) -> &Arc<GpSurrogate> {
        &self.surrogate
    }

    /// The archived model mapped into another task's target units.
    pub fn rescaled(&self, mean: f64, scale: f64) -> Rescaled {
        Rescaled::new(self.surrogate.clone(), mean, scale)
    }

    /// Native target statistics used when the surrogate was fitted.
    pub fn target_stats(&self) -> (f64, f64) {
        (self.target_mean, self.target_scale)
    }
}

/// `(1 − τ)/2` between the mean predictions of two models on the probes.
pub fn surrogate_distance(
    a: &dyn Surrogate,
    b: &dyn Surrogate,
    probes: &[Vec<f64>],
    context: &Context,
) -> Result<f64> {
    if probes.len() < 2 {
        return Err(Error::Argument("at least two probe points required".into()));
    }
    let pa: Vec<f64> = probes
        .iter()
        .map(|p| a.predict(p, context).map(|q| q.mean))
        .collect::<Result<_>>()?;
    let pb: Vec<f64> = probes
        .iter()
        .map(|p| b.predict(p, context).map(|q| q.mean))
        .collect::<Result<_>>()?;
    Ok(kendall_distance(&pa, &pb))
}

/// Regressor from a pair of meta-feature vectors to a task distance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DistanceModel {
    pub schema_id: String,
    pub version: u32,
    pub feature_len: usize,
    model: GradientBoosting,
    /// Mean absolute error on the held-out task pairs, when there were any.
    pub holdout_mae: Option<f64>,
    /// Task-id pairs kept out of training.
    pub holdout: Vec<(String, String)>,
}

pub const DISTANCE_MODEL_VERSION: u32 = 1;

fn pair_features(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(3 * a.len());
    x.extend_from_slice(a);
    x.extend_from_slice(b);
    x.extend(a.iter().zip(b).map(|(p, q)| (p - q).abs()));
    x
}

impl DistanceModel {
    /// Predicted distance in `[0,1]`; symmetric in its arguments.
    pub fn predict(&self, a: &MetaFeatureVector, b: &MetaFeatureVector) -> Result<f64> {
        for v in [a, b] {
            if v.schema_id != self.schema_id || v.values.len() != self.feature_len {
                return Err(Error::Schema(format!(
                    "meta-features of schema {} (length {}) given to a model for {} (length {})",
                    v.schema_id,
                    v.values.len(),
                    self.schema_id,
                    self.feature_len
                )));
            }
        }
        let ab = self.model.predict(&pair_features(&a.values, &b.values));
        let ba = self.model.predict(&pair_features(&b.values, &a.values));
        Ok((0.5 * (ab + ba)).clamp(0.0, 1.0))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("distance model serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let m: DistanceModel = serde_json::from_str(text).map_err(|e| Error::Schema(e.to_string()))?;
        if m.version != DISTANCE_MODEL_VERSION {
            return Err(Error::Schema(format!("distance model version {} unsupported", m.version)));
        }
        Ok(m)
    }
}

/// Seeded probe points in the unit cube of `space`.
///
/// They are left unrounded: rounding to a coarse grid would create ties
/// and pull the distance of a model to itself above zero.
pub fn probe_set(space: &ConfigurationSpace, count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    if count < 2 {
        return Err(Error::Argument("at least two probe points required".into()));
    }
    Ok(scrambled_halton(space.dimension(), count, seed))
}

/// Pairwise surrogate distances of a corpus on one shared probe set.
pub fn distance_matrix(corpus: &[TaskRecord], probe_count: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let first = corpus.first().ok_or_else(|| Error::State("empty corpus".into()))?;
    let probes = probe_set(&first.space, probe_count, seed)?;
    let ctx = Context::default();
    let n = corpus.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i + 1..n {
            let v = surrogate_distance(corpus[i].surrogate.as_ref(), corpus[j].surrogate.as_ref(), &probes, &ctx)?;
            d[i][j] = v;
            d[j][i] = v;
        }
    }
    Ok(d)
}

/// Trains the distance regressor on all ordered task pairs plus self-pairs
/// labelled 0, holding out about a fifth of the unordered pairs.
pub fn train_distance_model(corpus: &[TaskRecord], probe_count: usize, seed: u64) -> Result<DistanceModel> {
    if corpus.len() < 3 {
        return Err(Error::State(format!(
            "distance model needs at least 3 tasks, got {}",
            corpus.len()
        )));
    }
    let schema = &corpus[0].meta_features.schema_id;
    let len = corpus[0].meta_features.values.len();
    if corpus
        .iter()
        .any(|r| &r.meta_features.schema_id != schema || r.meta_features.values.len() != len)
    {
        return Err(Error::Schema("corpus mixes meta-feature schemas".into()));
    }
    let dist = distance_matrix(corpus, probe_count, seed)?;
    let n = corpus.len();
    let mut pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let held = if pairs.len() >= 5 { pairs.len() / 5 } else { 0 };
    let (holdout, train) = pairs.split_at(held);

    let vals = |i: usize| corpus[i].meta_features.values.as_slice();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for &(i, j) in train {
        x.push(pair_features(vals(i), vals(j)));
        y.push(dist[i][j]);
        x.push(pair_features(vals(j), vals(i)));
        y.push(dist[i][j]);
    }
    for i in 0..n {
        x.push(pair_features(vals(i), vals(i)));
        y.push(0.0);
    }
    let model = GradientBoosting::fit(&x, &y, &BoostingOptions::default())?;
    let mut dm = DistanceModel {
        schema_id: schema.clone(),
        version: DISTANCE_MODEL_VERSION,
        feature_len: len,
        model,
        holdout_mae: None,
        holdout: holdout
            .iter()
            .map(|&(i, j)| (corpus[i].task_id.clone(), corpus[j].task_id.clone()))
            .collect(),
    };
    if !holdout.is_empty() {
        let mut err = 0.0;
        for &(i, j) in holdout {
            err += (dm.predict(&corpus[i].meta_features, &corpus[j].meta_features)? - dist[i][j]).abs();
        }
        dm.holdout_mae = Some(err / holdout.len() as f64);
    }
    Ok(dm)
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt()
}

/// Archived tasks ordered from most to least similar, with their distances.
///
/// Without a model the plain Euclidean distance of the meta-features
/// orders the tasks (the returned values are then not in `[0,1]`).
pub fn rank_tasks(
    features: &MetaFeatureVector,
    repo: &[TaskRecord],
    model: Option<&DistanceModel>,
) -> Result<Vec<(usize, f64)>> {
    let mut ranked = repo
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = match model {
                Some(m) => m.predict(features, &r.meta_features)?,
                None => euclidean(&features.values, &r.meta_features.values),
            };
            Ok((i, d))
        })
        .collect::<Result<Vec<_>>>()?;
    ranked.sort_by(|a, b| {
        a.1.partial_cmp(&b.1)
            .unwrap_or(Ordering::Equal)
            .then_with(|| repo[a.0].task_id.cmp(&repo[b.0].task_id))
    });
    Ok(ranked)
}

/// Three distinct starting configurations for a new task.
///
/// Takes the best configuration of each of the most similar tasks in order,
/// skipping duplicates and configurations invalid in `space`. Runs out of
/// tasks and the list is padded with low-discrepancy samples.
pub fn warm_start(
    features: &MetaFeatureVector,
    repo: &[TaskRecord],
    model: Option<&DistanceModel>,
    space: &ConfigurationSpace,
    seed: u64,
) -> Result<Vec<Configuration>> {
    let mut out: Vec<Configuration> = Vec::with_capacity(WARM_START_SIZE);
    for (i, _) in rank_tasks(features, repo, model)? {
        if out.len() == WARM_START_SIZE {
            break;
        }
        let Some(best) = repo[i].best_configs.first() else { continue };
        if let Ok(c) = space.validate(best) {
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    if out.len() < WARM_START_SIZE {
        // extra draws in case a sample coincides with a chosen configuration
        for c in sample_low_discrepancy(space, 4 * WARM_START_SIZE, seed)? {
            if out.len() == WARM_START_SIZE {
                break;
            }
            if !out.contains(&c) {
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Normalized ensemble weights.
#[derive(Clone, Debug, PartialEq)]
pub struct EnsembleWeights {
    pub base: Vec<f64>,
    pub current: f64,
}

/// `wᵢ = 1 − dᵢ` for archived models and `current` for this task's own
/// model, normalized to sum 1. All-zero input puts full weight on the
/// current model.
pub fn ensemble_weights(distances: &[f64], current: f64) -> Result<EnsembleWeights> {
    if distances.iter().chain([&current]).any(|d| !(0.0..=1.0).contains(d)) {
        return Err(Error::Argument("distances and current weight must lie in [0,1]".into()));
    }
    let raw: Vec<f64> = distances.iter().map(|d| 1.0 - d).collect();
    let total = raw.iter().sum::<f64>() + current;
    if total <= 0.0 {
        return Ok(EnsembleWeights { base: vec![0.0; raw.len()], current: 1.0 });
    }
    Ok(EnsembleWeights {
        base: raw.iter().map(|w| w / total).collect(),
        current: current / total,
    })
}

/// Fraction of observation pairs whose order the leave-one-out predictions
/// reproduce; pairs with equal targets are skipped.
pub fn loo_rank_accuracy(model: &GpSurrogate) -> f64 {
    let gp = model.gp();
    let loo = gp.loo_means();
    let y = gp.targets();
    let (mut good, mut total) = (0usize, 0usize);
    for i in 0..y.len() {
        for j in i + 1..y.len() {
            if y[i] == y[j] {
                continue;
            }
            total += 1;
            if (y[i] < y[j]) == (loo[i] < loo[j]) && loo[i] != loo[j] {
                good += 1;
            }
        }
    }
    if total == 0 {
        0.0
    } else {
        good as f64 / total as f64
    }
}

/// Archived tasks plus the distance model trained on them.
#[derive(Clone, Debug, Default)]
pub struct MetaRepository {
    pub records: Vec<TaskRecord>,
    pub model: Option<DistanceModel>,
}

impl MetaRepository {
    pub fn new(records: Vec<TaskRecord>) -> Self {
        MetaRepository { records, model: None }
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Retrains the distance model if the corpus is large enough.
    pub fn train(&mut self, probe_count: usize, seed: u64) -> Result<()> {
        self.model = if self.records.len() >= 3 {
            Some(train_distance_model(&self.records, probe_count, seed)?)
        } else {
            None
        };
        Ok(())
    }

    pub fn warm_start(&self, features: &MetaFeatureVector, space: &ConfigurationSpace, seed: u64) -> Result<Vec<Configuration>> {
        warm_start(features, &self.records, self.model.as_ref(), space, seed)
    }

    /// Ensemble of the archived objective models (in the current task's
    /// units) and the current model weighted by its own ranking accuracy.
    ///
    /// Without a trained distance model every archived task gets distance ½.
    pub fn ensemble(&self, features: &MetaFeatureVector, current: Arc<GpSurrogate>) -> Result<EnsembleSurrogate> {
        let (mean, scale) = (current.gp().target_mean(), current.gp().target_scale());
        let distances: Vec<f64> = match &self.model {
            Some(m) => self
                .records
                .iter()
                .map(|r| m.predict(features, &r.meta_features))
                .collect::<Result<_>>()?,
            None => vec![0.5; self.records.len()],
        };
        let w = ensemble_weights(&distances, loo_rank_accuracy(&current))?;
        let base: Vec<(Arc<dyn Surrogate>, f64)> = self
            .records
            .iter()
            .zip(&w.base)
            .map(|(r, &wi)| (Arc::new(r.rescaled(mean, scale)) as Arc<dyn Surrogate>, wi))
            .collect();
        EnsembleSurrogate::new(base, Some((current as Arc<dyn Surrogate>, w.current)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::surrogate::Prediction;

    struct Ranked(Vec<f64>);
    impl Surrogate for Ranked {
        fn predict(&self, u: &[f64], _: &Context) -> Result<Prediction> {
            Ok(Prediction { mean: self.0[u[0] as usize], variance: 0.0 })
        }
    }

    #[test]
    fn distance_reference_cases() {
        let probes: Vec<Vec<f64>> = (0..3).map(|i| vec![i as f64]).collect();
        let ctx = Context::default();
        let a = Ranked(vec![1.0, 2.0, 3.0]);
        let b = Ranked(vec![1.0, 3.0, 2.0]);
        let r = Ranked(vec![-1.0, -2.0, -3.0]);
        assert_eq!(surrogate_distance(&a, &a, &probes, &ctx).unwrap(), 0.0);
        assert_eq!(surrogate_distance(&a, &r, &probes, &ctx).unwrap(), 1.0);
        assert_eq!(surrogate_distance(&a, &b, &probes, &ctx).unwrap(), 1.0 / 3.0);
        assert!(surrogate_distance(&a, &b, &probes[..1], &ctx).is_err());
    }

    #[test]
    fn weight_reference_cases() {
        let w = ensemble_weights(&[0.0], 0.0).unwrap();
        assert_eq!((w.base, w.current), (vec![1.0], 0.0));
        let w = ensemble_weights(&[0.0, 1.0], 0.0).unwrap();
        assert_eq!((w.base, w.current), (vec![1.0, 0.0], 0.0));
        let w = ensemble_weights(&[0.5, 0.5], 0.5).unwrap();
        for v in w.base.iter().chain([&w.current]) {
            assert!((v - 1.0 / 3.0).abs() < 1e-15);
        }
        assert!(ensemble_weights(&[1.5], 0.0).is_err());
        let w = ensemble_weights(&[1.0, 1.0], 0.0).unwrap();
        assert_eq!(w.current, 1.0);
    }
}
