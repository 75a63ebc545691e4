//! Regression trees over the unit cube: a bagged random forest for
//! importance analysis and gradient boosting for the task-distance model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TreeOptions {
    pub max_depth: usize,
    pub min_leaf: usize,
}

impl Default for TreeOptions {
    fn default() -> Self {
        TreeOptions { max_depth: 8, min_leaf: 1 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf(f64),
    Split {
        dim: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// Axis-aligned region of the input space that a tree maps to one value.
#[derive(Clone, Debug, PartialEq)]
pub struct LeafBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub value: f64,
}

impl LeafBox {
    /// Volume of the box with dimensions in `skip` left out.
    pub fn volume_except(&self, skip: &[usize]) -> f64 {
        (0..self.lo.len())
            .filter(|d| !skip.contains(d))
            .map(|d| self.hi[d] - self.lo[d])
            .product()
    }
}

/// CART regression tree with squared-error splits at midpoints between
/// distinct sorted values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    nodes: Vec<Node>,
    dim: usize,
}

fn check_data(x: &[Vec<f64>], y: &[f64]) -> Result<usize> {
    if x.is_empty() {
        return Err(Error::Data("no training rows".into()));
    }
    if x.len() != y.len() {
        return Err(Error::Shape(format!("{} rows but {} targets", x.len(), y.len())));
    }
    let dim = x[0].len();
    if x.iter().any(|r| r.len() != dim) {
        return Err(Error::Shape("ragged training rows".into()));
    }
    if y.iter().chain(x.iter().flatten()).any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite training value".into()));
    }
    Ok(dim)
}

impl RegressionTree {
    pub fn fit(x: &[Vec<f64>], y: &[f64], opts: &TreeOptions) -> Result<Self> {
        let idx: Vec<usize> = (0..x.len()).collect();
        Self::fit_rows(x, y, &idx, opts)
    }

    /// Fits on the given row indices (repeats allowed, as in a bootstrap).
    pub fn fit_rows(x: &[Vec<f64>], y: &[f64], rows: &[usize], opts: &TreeOptions) -> Result<Self> {
        let dim = check_data(x, y)?;
        if rows.is_empty() {
            return Err(Error::Data("no training rows".into()));
        }
        let mut tree = RegressionTree { nodes: Vec::new(), dim };
        let mut rows = rows.to_vec();
        tree.grow(x, y, &mut rows, 0, opts);
        Ok(tree)
    }

    fn grow(&mut self, x: &[Vec<f64>], y: &[f64], rows: &mut [usize], depth: usize, opts: &TreeOptions) -> usize {
        let n = rows.len() as f64;
        let sum: f64 = rows.iter().map(|&i| y[i]).sum();
        let mean = sum / n;
        let sse: f64 = rows.iter().map(|&i| (y[i] - mean).powi(2)).sum();
        let id = self.nodes.len();
        self.nodes.push(Node::Leaf(mean));
        let scale = rows.iter().map(|&i| y[i].abs()).fold(0.0, f64::max).max(1e-300);
        if depth >= opts.max_depth || rows.len() < 2 * opts.min_leaf.max(1) || sse <= 1e-24 * scale * scale * n {
            return id;
        }
        let Some((dim, threshold)) = best_split(x, y, rows, opts.min_leaf.max(1)) else {
            return id;
        };
        // partition rows in place
        let mut k = 0;
        for j in 0..rows.len() {
            if x[rows[j]][dim] <= threshold {
                rows.swap(j, k);
                k += 1;
            }
        }
        let (l, r) = rows.split_at_mut(k);
        let left = self.grow(x, y, l, depth + 1, opts);
        let right = self.grow(x, y, r, depth + 1, opts);
        self.nodes[id] = Node::Split { dim, threshold, left, right };
        id
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                Node::Leaf(v) => return *v,
                Node::Split { dim, threshold, left, right } => {
                    i = if x[*dim] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Partition of `[0,1]^dim` into leaf boxes.
    pub fn leaves(&self) -> Vec<LeafBox> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, vec![0.0; self.dim], vec![1.0; self.dim])];
        while let Some((i, lo, hi)) = stack.pop() {
            match &self.nodes[i] {
                Node::Leaf(v) => out.push(LeafBox { lo, hi, value: *v }),
                Node::Split { dim, threshold, left, right } => {
                    let t = threshold.clamp(lo[*dim], hi[*dim]);
                    let mut lhi = hi.clone();
                    lhi[*dim] = t;
                    let mut rlo = lo.clone();
                    rlo[*dim] = t;
                    stack.push((*right, rlo, hi));
                    stack.push((*left, lo, lhi));
                }
            }
        }
        out
    }
}

/// Best squared-error split; ties go to the lowest dimension, then the lowest
/// threshold. A split that removes no error is still taken, since products
/// such as `(x₁−½)(x₂−½)` show no marginal gain at the first level.
fn best_split(x: &[Vec<f64>], y: &[f64], rows: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let dim = x[rows[0]].len();
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| y[i]).sum();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<usize> = rows.to_vec();
    for d in 0..dim {
        order.sort_by(|&a, &b| x[a][d].total_cmp(&x[b][d]));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += y[order[k]];
            let (a, b) = (x[order[k]][d], x[order[k + 1]][d]);
            if a == b || k + 1 < min_leaf || n - k - 1 < min_leaf {
                continue;
            }
            let nl = (k + 1) as f64;
            let nr = (n - k - 1) as f64;
            let right_sum = total - left_sum;
            // maximizing this is minimizing the children's total squared error
            let score = left_sum * left_sum / nl + right_sum * right_sum / nr;
            if best.is_none_or(|(s, _, _)| score > s * (1.0 + 1e-12) + 1e-300) {
                best = Some((score, d, 0.5 * (a + b)));
            }
        }
    }
    best.map(|(_, d, t)| (d, t))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ForestOptions {
    pub trees: usize,
    pub tree: TreeOptions,
    pub seed: u64,
}

impl Default for ForestOptions {
    fn default() -> Self {
        ForestOptions { trees: 16, tree: TreeOptions::default(), seed: 0 }
    }
}

/// Bagged regression trees.
#[derive(Clone, Debug, PartialEq)]
pub struct RandomForest {
    trees: Vec<RegressionTree>,
}

impl RandomForest {
    pub fn fit(x: &[Vec<f64>], y: &[f64], opts: &ForestOptions) -> Result<Self> {
        check_data(x, y)?;
        if opts.trees == 0 {
            return Err(Error::Argument("a forest needs at least one tree".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        let n = x.len();
        let trees = (0..opts.trees)
            .map(|_| {
                let rows: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
                RegressionTree::fit_rows(x, y, &rows, &opts.tree)
            })
            .collect::<Result<_>>()?;
        Ok(RandomForest { trees })
    }

    pub fn trees(&self) -> &[RegressionTree] {
        &self.trees
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoostingOptions {
    pub rounds: usize,
    pub learning_rate: f64,
    pub tree: TreeOptions,
}

impl Default for BoostingOptions {
    fn default() -> Self {
        BoostingOptions {
            rounds: 150,
            learning_rate: 0.1,
            tree: TreeOptions { max_depth: 3, min_leaf: 2 },
        }
    }
}

/// Squared-loss gradient boosting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBoosting {
    base: f64,
    learning_rate: f64,
    trees: Vec<RegressionTree>,
}

impl GradientBoosting {
    pub fn fit(x: &[Vec<f64>], y: &[f64], opts: &BoostingOptions) -> Result<Self> {
        check_data(x, y)?;
        let base = y.iter().sum::<f64>() / y.len() as f64;
        let mut pred = vec![base; y.len()];
        let mut trees = Vec::with_capacity(opts.rounds);
        for _ in 0..opts.rounds {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(t, p)| t - p).collect();
            if resid.iter().all(|r| r.abs() < 1e-12) {
                break;
            }
            let tree = RegressionTree::fit(x, &resid, &opts.tree)?;
            for (p, row) in pred.iter_mut().zip(x) {
                *p += opts.learning_rate * tree.predict(row);
            }
            trees.push(tree);
        }
        Ok(GradientBoosting { base, learning_rate: opts.learning_rate, trees })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<Vec<f64>> {
        let mut out = Vec::new();
        for i in 0..n {
            for j in 0..n {
                out.push(vec![(i as f64 + 0.5) / n as f64, (j as f64 + 0.5) / n as f64]);
            }
        }
        out
    }

    #[test]
    fn step_function_recovered() {
        let x = grid(8);
        let y: Vec<f64> = x.iter().map(|r| if r[0] > 0.5 { 3.0 } else { -1.0 }).collect();
        let t = RegressionTree::fit(&x, &y, &TreeOptions::default()).unwrap();
        assert_eq!(t.predict(&[0.9, 0.1]), 3.0);
        assert_eq!(t.predict(&[0.1, 0.9]), -1.0);
        assert_eq!(t.leaves().len(), 2);
    }

    #[test]
    fn leaves_partition_unit_cube() {
        let x = grid(6);
        let y: Vec<f64> = x.iter().map(|r| (r[0] * 7.0).sin() + r[1] * r[1]).collect();
        let t = RegressionTree::fit(&x, &y, &TreeOptions::default()).unwrap();
        let vol: f64 = t.leaves().iter().map(|l| l.volume_except(&[])).sum();
        assert!((vol - 1.0).abs() < 1e-12);
        for l in t.leaves() {
            let mid: Vec<f64> = l.lo.iter().zip(&l.hi).map(|(a, b)| 0.5 * (a + b)).collect();
            assert_eq!(t.predict(&mid), l.value);
        }
    }

    #[test]
    fn interaction_gets_split() {
        let x = grid(8);
        let y: Vec<f64> = x.iter().map(|r| (r[0] - 0.5) * (r[1] - 0.5)).collect();
        let t = RegressionTree::fit(&x, &y, &TreeOptions::default()).unwrap();
        let err: f64 = x.iter().zip(&y).map(|(r, v)| (t.predict(r) - v).abs()).sum();
        assert!(err < 1e-9);
    }

    #[test]
    fn boosting_fits_smooth_target() {
        let x = grid(10);
        let y: Vec<f64> = x.iter().map(|r| r[0] + 0.5 * r[1]).collect();
        let g = GradientBoosting::fit(&x, &y, &BoostingOptions::default()).unwrap();
        let mae: f64 = x.iter().zip(&y).map(|(r, v)| (g.predict(r) - v).abs()).sum::<f64>() / y.len() as f64;
        assert!(mae < 0.05, "mae {mae}");
    }

    #[test]
    fn forest_is_deterministic() {
        let x = grid(5);
        let y: Vec<f64> = x.iter().map(|r| r[0] * 2.0 - r[1]).collect();
        let o = ForestOptions { seed: 9, ..Default::default() };
        let a = RandomForest::fit(&x, &y, &o).unwrap();
        let b = RandomForest::fit(&x, &y, &o).unwrap();
        assert_eq!(a, b);
        assert!(RandomForest::fit(&[], &[], &o).is_err());
    }
}
