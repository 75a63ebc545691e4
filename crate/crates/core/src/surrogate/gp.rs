//! Exact Gaussian-process regression on standardized targets.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::kernel::{DimKind, KernelSpec};
use crate::error::{Error, Result};

const SCALE_BOUNDS: (f64, f64) = (1e-3, 1e3);
const SIGNAL_BOUNDS: (f64, f64) = (1e-2, 1e2);
const NOISE_BOUNDS: (f64, f64) = (1e-8, 1.0);

/// Hyperparameter search settings.
#[derive(Clone, Debug, PartialEq)]
pub struct FitOptions {
    /// Maximize the log marginal likelihood; otherwise keep the given kernel.
    pub optimize: bool,
    pub restarts: usize,
    pub steps: usize,
    pub seed: u64,
    /// Pin the noise variance instead of optimizing it.
    pub fixed_noise: Option<f64>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            optimize: true,
            restarts: 5,
            steps: 50,
            seed: 0,
            fixed_noise: None,
        }
    }
}

impl FitOptions {
    pub fn fixed() -> Self {
        FitOptions {
            optimize: false,
            ..Default::default()
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
}

#[derive(Clone, Debug)]
pub struct GaussianProcess {
    inputs: Vec<Vec<f64>>,
    targets: DVector<f64>,
    kernel: KernelSpec,
    y_mean: f64,
    y_scale: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    jitter: f64,
    lml: f64,
}

impl GaussianProcess {
    /// Fits a GP to `(inputs, targets)`. Targets are standardized to zero
    /// mean and unit variance (scaling is skipped for constant targets).
    pub fn fit(
        inputs: Vec<Vec<f64>>,
        targets: &[f64],
        kernel: KernelSpec,
        opts: &FitOptions,
    ) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Data("no training points".into()));
        }
        if inputs.len() != targets.len() {
            return Err(Error::Shape(format!(
                "{} inputs but {} targets",
                inputs.len(),
                targets.len()
            )));
        }
        if let Some(bad) = targets.iter().find(|t| !t.is_finite()) {
            return Err(Error::Data(format!("non-finite target {bad}")));
        }
        if let Some(x) = inputs.iter().find(|x| x.len() != kernel.dim()) {
            return Err(Error::Shape(format!(
                "input of length {} for a {}-dimensional kernel",
                x.len(),
                kernel.dim()
            )));
        }
        kernel.validate()?;

        let n = targets.len() as f64;
        let y_mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|t| (t - y_mean).powi(2)).sum::<f64>() / n;
        let y_scale = if var.sqrt() > 1e-12 * y_mean.abs().max(1.0) {
            var.sqrt()
        } else {
            1.0
        };
        let y = DVector::from_iterator(targets.len(), targets.iter().map(|t| (t - y_mean) / y_scale));

        let mut kernel = kernel;
        if let Some(noise) = opts.fixed_noise {
            kernel.noise_variance = noise;
        }
        if opts.optimize {
            kernel = optimize_hyperparameters(&inputs, &y, kernel, opts);
        }

        let gram = gram_matrix(&inputs, &kernel);
        let (chol, jitter) = factorize(&gram, kernel.noise_variance)?;
        let alpha = chol.solve(&y);
        let lml = log_marginal(&y, &alpha, &chol);
        Ok(GaussianProcess {
            inputs,
            targets: y,
            kernel,
            y_mean,
            y_scale,
            chol,
            alpha,
            jitter,
            lml,
        })
    }

    pub fn kernel(&self) -> &KernelSpec {
        &self.kernel
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.kernel.dim()
    }

    pub fn target_mean(&self) -> f64 {
        self.y_mean
    }

    pub fn target_scale(&self) -> f64 {
        self.y_scale
    }

    /// Jitter that had to be added to factorize the kernel matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn log_marginal_likelihood(&self) -> f64 {
        self.lml
    }

    /// Posterior mean and latent variance in standardized units.
    pub fn predict_standardized(&self, x: &[f64]) -> Result<(f64, f64)> {
        if x.len() != self.dim() {
            return Err(Error::Shape(format!(
                "query of length {} for a {}-dimensional model",
                x.len(),
                self.dim()
            )));
        }
        let kstar = DVector::from_iterator(
            self.inputs.len(),
            self.inputs.iter().map(|xi| self.kernel.eval(xi, x)),
        );
        let mean = kstar.dot(&self.alpha);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&kstar)
            .unwrap_or_else(|| DVector::zeros(self.inputs.len()));
        let var = (self.kernel.signal_variance - v.dot(&v)).max(0.0);
        Ok((mean, var))
    }

    /// Posterior mean and latent variance in native target units.
    pub fn predict(&self, x: &[f64]) -> Result<(f64, f64)> {
        let (m, v) = self.predict_standardized(x)?;
        Ok((self.y_mean + self.y_scale * m, v * self.y_scale * self.y_scale))
    }

    /// Closed-form leave-one-out predictive means, native units.
    pub fn loo_means(&self) -> Vec<f64> {
        let inv = self.chol.inverse();
        (0..self.inputs.len())
            .map(|i| {
                let z = self.targets[i] - self.alpha[i] / inv[(i, i)];
                self.y_mean + self.y_scale * z
            })
            .collect()
    }

    /// Training targets in native units.
    pub fn targets(&self) -> Vec<f64> {
        self.targets
            .iter()
            .map(|t| self.y_mean + self.y_scale * t)
            .collect()
    }
}

fn gram_matrix(inputs: &[Vec<f64>], kernel: &KernelSpec) -> DMatrix<f64> {
    let n = inputs.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval(&inputs[i], &inputs[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

/// Cholesky of `gram + noise·I`, escalating jitter from 1e-8 to 1e-2 on failure.
fn factorize(gram: &DMatrix<f64>, noise: f64) -> Result<(Cholesky<f64, Dyn>, f64)> {
    let n = gram.nrows();
    let mut jitter = 0.0;
    loop {
        let mut k = gram.clone();
        for i in 0..n {
            k[(i, i)] += noise + jitter;
        }
        if let Some(c) = k.cholesky() {
            return Ok((c, jitter));
        }
        jitter = if jitter == 0.0 { 1e-8 } else { jitter * 10.0 };
        if jitter > 1e-2 * (1.0 + 1e-9) {
            return Err(Error::Numerical(
                "kernel matrix not positive definite after jitter 1e-2".into(),
            ));
        }
    }
}

fn log_marginal(y: &DVector<f64>, alpha: &DVector<f64>, chol: &Cholesky<f64, Dyn>) -> f64 {
    let n = y.len() as f64;
    let logdet: f64 = chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum();
    -0.5 * y.dot(alpha) - logdet - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
}

// ---- hyperparameter search ----

struct Layout {
    n_scales: usize,
    optimize_noise: bool,
}

impl Layout {
    fn len(&self) -> usize {
        self.n_scales + 1 + usize::from(self.optimize_noise)
    }

    fn native_bounds(&self, i: usize) -> (f64, f64) {
        if i < self.n_scales {
            SCALE_BOUNDS
        } else if i == self.n_scales {
            SIGNAL_BOUNDS
        } else {
            NOISE_BOUNDS
        }
    }

    fn bounds(&self, i: usize) -> (f64, f64) {
        let (lo, hi) = self.native_bounds(i);
        (lo.ln(), hi.ln())
    }

    fn encode(&self, k: &KernelSpec) -> Vec<f64> {
        let mut t: Vec<f64> = k.scales.iter().map(|s| s.ln()).collect();
        t.push(k.signal_variance.ln());
        if self.optimize_noise {
            t.push(k.noise_variance.max(NOISE_BOUNDS.0).ln());
        }
        self.clamp(&mut t);
        t
    }

    fn decode(&self, t: &[f64], base: &KernelSpec) -> KernelSpec {
        // exp(ln(b)) can land an ulp outside the bound b
        let native = |i: usize| {
            let (lo, hi) = self.native_bounds(i);
            t[i].exp().clamp(lo, hi)
        };
        let mut k = base.clone();
        for (i, s) in k.scales.iter_mut().enumerate() {
            *s = native(i);
        }
        k.signal_variance = native(self.n_scales);
        if self.optimize_noise {
            k.noise_variance = native(self.n_scales + 1);
        }
        k
    }

    fn clamp(&self, t: &mut [f64]) {
        for (i, v) in t.iter_mut().enumerate() {
            let (lo, hi) = self.bounds(i);
            *v = v.clamp(lo, hi);
        }
    }

    fn random_start(&self, kinds: &[DimKind], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let mut t = Vec::with_capacity(self.len());
        for kind in kinds {
            let (lo, hi): (f64, f64) = match kind {
                DimKind::Categorical => (0.1, 3.0),
                _ => (0.05, 3.0),
            };
            t.push(rng.random_range(lo.ln()..hi.ln()));
        }
        t.push(rng.random_range(0.3f64.ln()..3.0f64.ln()));
        if self.optimize_noise {
            t.push(rng.random_range(1e-6f64.ln()..1e-1f64.ln()));
        }
        t
    }
}

/// Log marginal likelihood and its gradient in log-parameter space.
fn lml_and_grad(
    inputs: &[Vec<f64>],
    y: &DVector<f64>,
    kernel: &KernelSpec,
    layout: &Layout,
) -> Option<(f64, Vec<f64>)> {
    let n = inputs.len();
    let p = kernel.dim() + 1;
    let mut gram = DMatrix::zeros(n, n);
    let mut dk: Vec<DMatrix<f64>> = vec![DMatrix::zeros(n, n); p];
    let mut g = vec![0.0; p];
    for i in 0..n {
        for j in 0..=i {
            let v = kernel.eval_grad(&inputs[i], &inputs[j], &mut g);
            gram[(i, j)] = v;
            gram[(j, i)] = v;
            for (m, gv) in dk.iter_mut().zip(&g) {
                m[(i, j)] = *gv;
                m[(j, i)] = *gv;
            }
        }
    }
    for i in 0..n {
        gram[(i, i)] += kernel.noise_variance;
    }
    let chol = gram.cholesky()?;
    let alpha = chol.solve(y);
    let lml = log_marginal(y, &alpha, &chol);
    if !lml.is_finite() {
        return None;
    }
    let inv = chol.inverse();
    // W = alpha alpha^T - K^-1; dLML = 1/2 tr(W dK)
    let mut grad = Vec::with_capacity(layout.len());
    for m in &dk {
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (alpha[i] * alpha[j] - inv[(i, j)]) * m[(j, i)];
            }
        }
        grad.push(0.5 * acc);
    }
    if layout.optimize_noise {
        let tr: f64 = (0..n).map(|i| alpha[i] * alpha[i] - inv[(i, i)]).sum();
        grad.push(0.5 * kernel.noise_variance * tr);
    }
    Some((lml, grad))
}

/// Multi-start resilient-propagation ascent on the log marginal likelihood.
fn optimize_hyperparameters(
    inputs: &[Vec<f64>],
    y: &DVector<f64>,
    kernel: KernelSpec,
    opts: &FitOptions,
) -> KernelSpec {
    let layout = Layout {
        n_scales: kernel.dim(),
        optimize_noise: opts.fixed_noise.is_none(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut starts = vec![layout.encode(&kernel)];
    for _ in 1..opts.restarts.max(1) {
        starts.push(layout.random_start(&kernel.kinds, &mut rng));
    }

    let mut best: Option<(f64, Vec<f64>)> = None;
    for start in starts {
        let mut theta = start;
        layout.clamp(&mut theta);
        let Some((f, mut grad)) = lml_and_grad(inputs, y, &layout.decode(&theta, &kernel), &layout)
        else {
            continue;
        };
        if best.as_ref().is_none_or(|(bf, _)| f > *bf) {
            best = Some((f, theta.clone()));
        }
        let mut delta = vec![0.1f64; theta.len()];
        let mut prev = vec![0.0; theta.len()];
        for _ in 0..opts.steps {
            let mut next = theta.clone();
            for i in 0..theta.len() {
                let s = grad[i] * prev[i];
                if s > 0.0 {
                    delta[i] = (delta[i] * 1.2).min(1.0);
                } else if s < 0.0 {
                    delta[i] = (delta[i] * 0.5).max(1e-6);
                    grad[i] = 0.0;
                }
                if grad[i] != 0.0 {
                    next[i] += grad[i].signum() * delta[i];
                }
            }
            layout.clamp(&mut next);
            prev.clone_from(&grad);
            match lml_and_grad(inputs, y, &layout.decode(&next, &kernel), &layout) {
                Some((nf, ng)) => {
                    theta = next;
                    grad = ng;
                    if best.as_ref().is_none_or(|(bf, _)| nf > *bf) {
                        best = Some((nf, theta.clone()));
                    }
                }
                None => {
                    for d in delta.iter_mut() {
                        *d *= 0.5;
                    }
                    prev.iter_mut().for_each(|p| *p = 0.0);
                }
            }
        }
    }
    match best {
        Some((_, theta)) => layout.decode(&theta, &kernel),
        None => kernel,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k1(ls: f64, noise: f64) -> KernelSpec {
        KernelSpec::new(vec![DimKind::Numeric])
            .with_scales(vec![ls])
            .with_noise(noise)
    }

    #[test]
    fn single_point_interpolates() {
        let gp = GaussianProcess::fit(vec![vec![0.3]], &[4.2], k1(0.5, 0.0), &FitOptions::fixed()).unwrap();
        let (m, v) = gp.predict(&[0.3]).unwrap();
        assert!((m - 4.2).abs() < 1e-12);
        assert!(v < 1e-12);
    }

    #[test]
    fn duplicate_rows_fit() {
        let x = vec![vec![0.2], vec![0.2], vec![0.7]];
        let gp = GaussianProcess::fit(x, &[1.0, 1.0, 3.0], k1(0.5, 0.0), &FitOptions::fixed()).unwrap();
        assert!(gp.jitter() > 0.0);
        let opt = GaussianProcess::fit(
            vec![vec![0.2], vec![0.2], vec![0.7]],
            &[1.0, 1.1, 3.0],
            k1(0.5, 1e-6),
            &FitOptions::default(),
        );
        assert!(opt.is_ok());
    }

    #[test]
    fn rejects_bad_targets() {
        let r = GaussianProcess::fit(vec![vec![0.1]], &[f64::NAN], k1(0.5, 0.0), &FitOptions::fixed());
        assert!(matches!(r, Err(Error::Data(_))));
        let r = GaussianProcess::fit(vec![], &[], k1(0.5, 0.0), &FitOptions::fixed());
        assert!(matches!(r, Err(Error::Data(_))));
    }

    #[test]
    fn prior_reversion_far_away() {
        let x = vec![vec![0.0], vec![0.01]];
        let gp = GaussianProcess::fit(x, &[1.0, 3.0], k1(0.001, 0.0), &FitOptions::fixed()).unwrap();
        let (m, v) = gp.predict(&[1.0]).unwrap();
        assert!((m - 2.0).abs() < 1e-9);
        // signal variance 1 in standardized units, scale = 1
        assert!((v - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sine_interpolation() {
        let xs: Vec<f64> = (0..5).map(|i| i as f64 / 4.0 * 0.9 + 0.05).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (2.0 * std::f64::consts::PI * x).sin()).collect();
        let gp = GaussianProcess::fit(
            xs.iter().map(|x| vec![*x]).collect(),
            &ys,
            k1(0.3, 1e-8),
            &FitOptions {
                fixed_noise: Some(1e-8),
                ..Default::default()
            },
        )
        .unwrap();
        for (x, y) in xs.iter().zip(&ys) {
            let (m, _) = gp.predict(&[*x]).unwrap();
            assert!((m - y).abs() < 1e-3);
        }
    }

    #[test]
    fn optimization_improves_likelihood() {
        let xs: Vec<Vec<f64>> = (0..12).map(|i| vec![i as f64 / 11.0]).collect();
        let ys: Vec<f64> = xs.iter().map(|x| (6.0 * x[0]).sin()).collect();
        let fixed = GaussianProcess::fit(xs.clone(), &ys, k1(50.0, 0.5), &FitOptions::fixed()).unwrap();
        let tuned = GaussianProcess::fit(xs, &ys, k1(50.0, 0.5), &FitOptions::default()).unwrap();
        assert!(tuned.log_marginal_likelihood() > fixed.log_marginal_likelihood());
        let ls = tuned.kernel().scales[0];
        assert!((1e-3..=1e3).contains(&ls));
        assert!((1e-8..=1.0).contains(&tuned.kernel().noise_variance));
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let xs: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64 / 5.0, ((i * 7) % 5) as f64 / 4.0]).collect();
        let y = DVector::from_vec(vec![0.3, -1.0, 0.5, 1.2, -0.4, 0.1]);
        let k = KernelSpec::new(vec![DimKind::Numeric, DimKind::Context])
            .with_scales(vec![0.4, 0.9])
            .with_signal_variance(1.1)
            .with_noise(0.05);
        let layout = Layout { n_scales: 2, optimize_noise: true };
        let theta = layout.encode(&k);
        let (_, grad) = lml_and_grad(&xs, &y, &k, &layout).unwrap();
        for i in 0..theta.len() {
            let h = 1e-6;
            let mut tp = theta.clone();
            tp[i] += h;
            let mut tm = theta.clone();
            tm[i] -= h;
            let fp = lml_and_grad(&xs, &y, &layout.decode(&tp, &k), &layout).unwrap().0;
            let fm = lml_and_grad(&xs, &y, &layout.decode(&tm, &k), &layout).unwrap().0;
            let fd = (fp - fm) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-5, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn loo_means_match_refits() {
        let xs: Vec<Vec<f64>> = (0..5).map(|i| vec![i as f64 / 4.0]).collect();
        let ys = [1.0, 2.0, 0.5, 3.0, 2.5];
        let k = k1(0.4, 0.01);
        let gp = GaussianProcess::fit(xs.clone(), &ys, k.clone(), &FitOptions::fixed()).unwrap();
        let loo = gp.loo_means();
        // refit without point i using the full-data standardization
        let (mu, sd) = (gp.target_mean(), gp.target_scale());
        for i in 0..5 {
            let xi: Vec<Vec<f64>> = xs.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, x)| x.clone()).collect();
            let yi: Vec<f64> = ys.iter().enumerate().filter(|(j, _)| *j != i).map(|(_, y)| (y - mu) / sd).collect();
            // direct solve of the reduced system
            let n = xi.len();
            let mut kk = DMatrix::zeros(n, n);
            for a in 0..n {
                for b in 0..n {
                    kk[(a, b)] = k.eval(&xi[a], &xi[b]) + if a == b { k.noise_variance } else { 0.0 };
                }
            }
            let ks = DVector::from_iterator(n, xi.iter().map(|x| k.eval(x, &xs[i])));
            let m = ks.dot(&kk.lu().solve(&DVector::from_vec(yi)).unwrap());
            assert!((loo[i] - (mu + sd * m)).abs() < 1e-9);
        }
    }
}
