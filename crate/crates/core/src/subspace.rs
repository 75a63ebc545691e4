//! Parameter importance by functional ANOVA over a random forest, and the
//! success/failure rule that grows or shrinks the searched sub-space.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::forest::{ForestOptions, LeafBox, RandomForest, RegressionTree};
use crate::history::Observation;
use crate::space::{Configuration, ConfigurationSpace, SubSpace};

/// Fewer usable observations than this and importance falls back to the
/// expert ranking.
pub const MIN_OBSERVATIONS: usize = 10;

/// Variance fractions per parameter and per parameter pair.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub scores: BTreeMap<String, f64>,
    /// `(first, second, score)` for pairs of parameters the trees split on.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub interactions: Vec<(String, String, f64)>,
    pub samples: usize,
    /// False when the scores are a placeholder derived from the prior ranking.
    pub confident: bool,
}

impl ImportanceReport {
    /// Scores that decrease along the expert ranking; unranked parameters get 0.
    pub fn from_prior(space: &ConfigurationSpace, samples: usize) -> Self {
        let ranking = space.prior_ranking();
        let n = ranking.len() as f64;
        let scores = space
            .names()
            .into_iter()
            .map(|name| {
                let s = ranking
                    .iter()
                    .position(|r| *r == name)
                    .map_or(0.0, |i| (n - i as f64) / (n * (n + 1.0) / 2.0));
                (name, s)
            })
            .collect();
        ImportanceReport { scores, interactions: Vec::new(), samples, confident: false }
    }

    /// Parameters sorted by descending score, ties by prior rank then name.
    pub fn ranking(&self, space: &ConfigurationSpace) -> Vec<String> {
        let prior = space.prior_ranking();
        let rank = |n: &str| prior.iter().position(|p| p == n).unwrap_or(usize::MAX);
        let mut names = space.names();
        names.sort_by(|a, b| {
            let sa = self.scores.get(a).copied().unwrap_or(0.0);
            let sb = self.scores.get(b).copied().unwrap_or(0.0);
            sb.total_cmp(&sa).then(rank(a).cmp(&rank(b))).then(a.cmp(b))
        });
        names
    }

    /// `{parameter, score}` pairs in descending order.
    pub fn to_document(&self, space: &ConfigurationSpace) -> serde_json::Value {
        let rows: Vec<serde_json::Value> = self
            .ranking(space)
            .into_iter()
            .map(|p| {
                let s = self.scores.get(&p).copied().unwrap_or(0.0);
                serde_json::json!({ "parameter": p, "score": s })
            })
            .collect();
        serde_json::json!({
            "confident": self.confident,
            "samples": self.samples,
            "scores": rows,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImportanceOptions {
    pub forest: ForestOptions,
    /// Also compute pairwise interaction scores.
    pub pairs: bool,
}

impl Default for ImportanceOptions {
    fn default() -> Self {
        ImportanceOptions { forest: ForestOptions::default(), pairs: false }
    }
}

/// Importance of each parameter for the objective over the usable part of `history`.
pub fn importance_scores(
    history: &[Observation],
    space: &ConfigurationSpace,
    opts: &ImportanceOptions,
) -> Result<ImportanceReport> {
    let usable: Vec<&Observation> = history.iter().filter(|o| o.is_usable()).collect();
    if usable.len() < MIN_OBSERVATIONS {
        return Ok(ImportanceReport::from_prior(space, usable.len()));
    }
    let x: Vec<Vec<f64>> = usable
        .iter()
        .map(|o| space.normalize(&o.configuration))
        .collect::<Result<_>>()?;
    let y: Vec<f64> = usable.iter().map(|o| o.objective).collect();
    let mut report = importance_from_data(&x, &y, &space.names(), opts)?;
    report.samples = usable.len();
    Ok(report)
}

/// fANOVA scores for arbitrary unit-cube data; `names` label the columns.
pub fn importance_from_data(
    x: &[Vec<f64>],
    y: &[f64],
    names: &[String],
    opts: &ImportanceOptions,
) -> Result<ImportanceReport> {
    if x.first().is_some_and(|r| r.len() != names.len()) {
        return Err(Error::Shape("one name per column required".into()));
    }
    let dim = names.len();
    let mut singles = vec![0.0; dim];
    let mut pairs: BTreeMap<(usize, usize), f64> = BTreeMap::new();
    let forest = RandomForest::fit(x, y, &opts.forest)?;
    let trees = forest.trees();
    for tree in trees {
        let dec = decompose(tree, opts.pairs);
        for d in 0..dim {
            singles[d] += dec.singles[d];
        }
        for (k, v) in dec.pairs {
            *pairs.entry(k).or_default() += v;
        }
    }
    let t = trees.len() as f64;
    Ok(ImportanceReport {
        scores: names.iter().cloned().zip(singles.iter().map(|s| s / t)).collect(),
        interactions: pairs
            .into_iter()
            .map(|((a, b), v)| (names[a].clone(), names[b].clone(), v / t))
            .collect(),
        samples: x.len(),
        confident: true,
    })
}

struct Decomposition {
    singles: Vec<f64>,
    pairs: BTreeMap<(usize, usize), f64>,
}

/// Sorted distinct leaf boundaries along `d`, always including 0 and 1.
fn breakpoints(leaves: &[LeafBox], d: usize) -> Vec<f64> {
    let mut b: Vec<f64> = leaves.iter().flat_map(|l| [l.lo[d], l.hi[d]]).collect();
    b.push(0.0);
    b.push(1.0);
    b.sort_by(f64::total_cmp);
    b.dedup();
    b
}

fn interval_range(bp: &[f64], lo: f64, hi: f64) -> std::ops::Range<usize> {
    let a = bp.partition_point(|v| *v < lo);
    let b = bp.partition_point(|v| *v < hi);
    a..b
}

/// Exact variance decomposition of one tree under the uniform measure on
/// the unit cube. Marginals are piecewise constant between leaf boundaries,
/// so each one is accumulated interval by interval.
fn decompose(tree: &RegressionTree, with_pairs: bool) -> Decomposition {
    let dim = tree.dim();
    let leaves = tree.leaves();
    let mean: f64 = leaves.iter().map(|l| l.value * l.volume_except(&[])).sum();
    let total: f64 = leaves
        .iter()
        .map(|l| (l.value - mean).powi(2) * l.volume_except(&[]))
        .sum();
    let mut out = Decomposition { singles: vec![0.0; dim], pairs: BTreeMap::new() };
    if total <= 1e-300 {
        return out;
    }
    let split_dims: Vec<usize> = (0..dim)
        .filter(|&d| leaves.iter().any(|l| l.lo[d] > 0.0 || l.hi[d] < 1.0))
        .collect();
    let mut var1 = vec![0.0; dim];
    let mut bps: Vec<Vec<f64>> = vec![Vec::new(); dim];
    for &d in &split_dims {
        let bp = breakpoints(&leaves, d);
        let mut m = vec![0.0; bp.len() - 1];
        for l in &leaves {
            let w = l.value * l.volume_except(&[d]);
            for i in interval_range(&bp, l.lo[d], l.hi[d]) {
                m[i] += w;
            }
        }
        var1[d] = m
            .iter()
            .enumerate()
            .map(|(i, v)| (v - mean).powi(2) * (bp[i + 1] - bp[i]))
            .sum();
        out.singles[d] = var1[d] / total;
        bps[d] = bp;
    }
    if with_pairs {
        for (ai, &a) in split_dims.iter().enumerate() {
            for &b in &split_dims[ai + 1..] {
                let (ba, bb) = (&bps[a], &bps[b]);
                let cols = bb.len() - 1;
                let mut m = vec![0.0; (ba.len() - 1) * cols];
                for l in &leaves {
                    let w = l.value * l.volume_except(&[a, b]);
                    for i in interval_range(ba, l.lo[a], l.hi[a]) {
                        for j in interval_range(bb, l.lo[b], l.hi[b]) {
                            m[i * cols + j] += w;
                        }
                    }
                }
                let mut v = 0.0;
                for i in 0..ba.len() - 1 {
                    for j in 0..cols {
                        v += (m[i * cols + j] - mean).powi(2) * (ba[i + 1] - ba[i]) * (bb[j + 1] - bb[j]);
                    }
                }
                let inter = (v - var1[a] - var1[b]).max(0.0);
                out.pairs.insert((a, b), inter / total);
            }
        }
    }
    out
}

/// Averages reports of several tasks parameter by parameter.
pub fn average_reports(reports: &[ImportanceReport]) -> Result<ImportanceReport> {
    if reports.is_empty() {
        return Err(Error::Argument("nothing to average".into()));
    }
    let mut scores: BTreeMap<String, f64> = BTreeMap::new();
    let mut inter: BTreeMap<(String, String), f64> = BTreeMap::new();
    for r in reports {
        for (k, v) in &r.scores {
            *scores.entry(k.clone()).or_default() += v;
        }
        for (a, b, v) in &r.interactions {
            *inter.entry((a.clone(), b.clone())).or_default() += v;
        }
    }
    let n = reports.len() as f64;
    scores.values_mut().for_each(|v| *v /= n);
    inter.values_mut().for_each(|v| *v /= n);
    Ok(ImportanceReport {
        scores,
        interactions: inter.into_iter().map(|((a, b), v)| (a, b, v)).collect(),
        samples: reports.iter().map(|r| r.samples).sum(),
        confident: reports.iter().any(|r| r.confident),
    })
}

/// Sub-space of the `k` highest-scoring parameters, anchored at `anchor`.
pub fn build_subspace(
    space: &ConfigurationSpace,
    report: &ImportanceReport,
    k: usize,
    anchor: Configuration,
) -> Result<SubSpace> {
    if k < 1 {
        return Err(Error::Argument("sub-space size must be at least 1".into()));
    }
    if k > space.dimension() {
        return Err(Error::Argument(format!(
            "sub-space size {k} exceeds {} parameters",
            space.dimension()
        )));
    }
    let members = report.ranking(space).into_iter().take(k).collect();
    SubSpace::new(space, members, anchor)
}

/// Size controller for the sub-space.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubSpaceState {
    pub k: usize,
    pub success_count: u32,
    pub failure_count: u32,
    pub k_min: usize,
    pub k_max: usize,
    pub k_init: usize,
    pub tau_success: u32,
    pub tau_failure: u32,
}

impl SubSpaceState {
    /// Standard thresholds for a space of `n` parameters. `K_min` and
    /// `K_init` are capped at `n` so that small spaces stay valid.
    pub fn new(n: usize) -> Self {
        let n = n.max(1);
        let k_min = 4.min(n);
        let k_init = 10.min(n);
        SubSpaceState {
            k: k_init,
            success_count: 0,
            failure_count: 0,
            k_min,
            k_max: n,
            k_init,
            tau_success: 3,
            tau_failure: 5,
        }
    }

    /// A controller that never changes size.
    pub fn fixed(k: usize) -> Self {
        SubSpaceState { k, k_min: k, k_max: k, k_init: k, ..Self::new(k) }
    }

    /// Records whether the latest observation improved the best feasible objective.
    pub fn update(&mut self, improved: bool) {
        if improved {
            self.success_count += 1;
            self.failure_count = 0;
        } else {
            self.failure_count += 1;
            self.success_count = 0;
        }
        if self.success_count >= self.tau_success {
            self.k = (self.k + 2).min(self.k_max);
            self.success_count = 0;
            self.failure_count = 0;
        } else if self.failure_count >= self.tau_failure {
            self.k = self.k.saturating_sub(2).max(self.k_min);
            self.success_count = 0;
            self.failure_count = 0;
        }
    }
}

/// Functional form of [`SubSpaceState::update`].
pub fn update_size(state: &SubSpaceState, improved: bool) -> SubSpaceState {
    let mut next = state.clone();
    next.update(improved);
    next
}
