//! Mixed product kernel: Matérn-5/2 over numeric dimensions, Hamming over
//! categorical dimensions and squared-exponential over context features.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DimKind {
    Numeric,
    Categorical,
    Context,
}

/// Kernel hyperparameters.
///
/// `scales[d]` is a lengthscale for numeric and context dimensions and a
/// Hamming weight for categorical ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub kinds: Vec<DimKind>,
    pub scales: Vec<f64>,
    pub signal_variance: f64,
    pub noise_variance: f64,
}

impl KernelSpec {
    pub fn new(kinds: Vec<DimKind>) -> Self {
        let scales = kinds
            .iter()
            .map(|k| match k {
                DimKind::Categorical => 1.0,
                _ => 0.5,
            })
            .collect();
        KernelSpec {
            kinds,
            scales,
            signal_variance: 1.0,
            noise_variance: 1e-6,
        }
    }

    pub fn with_scales(mut self, scales: Vec<f64>) -> Self {
        self.scales = scales;
        self
    }

    pub fn with_signal_variance(mut self, v: f64) -> Self {
        self.signal_variance = v;
        self
    }

    pub fn with_noise(mut self, v: f64) -> Self {
        self.noise_variance = v;
        self
    }

    pub fn dim(&self) -> usize {
        self.kinds.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.len() != self.kinds.len() {
            return Err(Error::Shape("one scale per dimension required".into()));
        }
        if self.scales.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Argument("kernel scales must be positive".into()));
        }
        if !(self.signal_variance > 0.0) || !(self.noise_variance >= 0.0) {
            return Err(Error::Argument(
                "signal variance must be positive and noise non-negative".into(),
            ));
        }
        Ok(())
    }

    /// Covariance between two points; no shape checks.
    pub(crate) fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        let (mut r2, mut ham, mut q) = (0.0, 0.0, 0.0);
        for d in 0..self.kinds.len() {
            let delta = a[d] - b[d];
            match self.kinds[d] {
                DimKind::Numeric => {
                    let z = delta / self.scales[d];
                    r2 += z * z;
                }
                DimKind::Categorical => {
                    if delta.abs() > 1e-9 {
                        ham += self.scales[d];
                    }
                }
                DimKind::Context => {
                    let z = delta / self.scales[d];
                    q += z * z;
                }
            }
        }
        let r = r2.sqrt();
        let matern = (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * (-SQRT5 * r).exp();
        self.signal_variance * matern * (-ham).exp() * (-0.5 * q).exp()
    }

    /// Covariance and its gradient with respect to `[ln scales.., ln signal_variance]`.
    pub(crate) fn eval_grad(&self, a: &[f64], b: &[f64], grad: &mut [f64]) -> f64 {
        let (mut r2, mut ham, mut q) = (0.0, 0.0, 0.0);
        for d in 0..self.kinds.len() {
            let delta = a[d] - b[d];
            match self.kinds[d] {
                DimKind::Numeric => {
                    let z = delta / self.scales[d];
                    r2 += z * z;
                }
                DimKind::Categorical => {
                    if delta.abs() > 1e-9 {
                        ham += self.scales[d];
                    }
                }
                DimKind::Context => {
                    let z = delta / self.scales[d];
                    q += z * z;
                }
            }
        }
        let r = r2.sqrt();
        let e = (-SQRT5 * r).exp();
        let matern = (1.0 + SQRT5 * r + 5.0 / 3.0 * r2) * e;
        // d matern / d ln l_d = g * delta_d^2 / l_d^2
        let g = 5.0 / 3.0 * (1.0 + SQRT5 * r) * e;
        let kh = (-ham).exp();
        let ks = (-0.5 * q).exp();
        let k = self.signal_variance * matern * kh * ks;
        for d in 0..self.kinds.len() {
            let delta = a[d] - b[d];
            grad[d] = match self.kinds[d] {
                DimKind::Numeric => {
                    let z2 = (delta / self.scales[d]).powi(2);
                    self.signal_variance * g * z2 * kh * ks
                }
                DimKind::Categorical => {
                    if delta.abs() > 1e-9 {
                        -self.scales[d] * k
                    } else {
                        0.0
                    }
                }
                DimKind::Context => k * (delta / self.scales[d]).powi(2),
            };
        }
        grad[self.kinds.len()] = k;
        k
    }
}

/// Kernel value between two points (normalized configuration plus context features).
pub fn kernel_value(a: &[f64], b: &[f64], spec: &KernelSpec) -> Result<f64> {
    if a.len() != b.len() || a.len() != spec.dim() {
        return Err(Error::Shape(format!(
            "kernel inputs of length {} and {} for a {}-dimensional kernel",
            a.len(),
            b.len(),
            spec.dim()
        )));
    }
    spec.validate()?;
    Ok(spec.eval(a, b))
}
