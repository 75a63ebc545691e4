//! Gaussian-process surrogates.
//!
//! [`GaussianProcess`] is plain GP regression over feature vectors.
//! [`GpSurrogate`] adds the encoding of configurations plus workload context
//! into those vectors, and [`EnsembleSurrogate`] combines surrogates from
//! several tasks.

mod ensemble;
mod gp;
mod kernel;
mod model;

pub use ensemble::{EnsembleSurrogate, Rescaled};
pub use gp::{FitOptions, GaussianProcess};
pub use kernel::{kernel_value, DimKind, KernelSpec};
pub use model::{ContextEncoder, GpSurrogate, Sample};

use crate::error::Result;
use crate::history::Context;

/// Posterior mean and variance at one point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub variance: f64,
}

impl Prediction {
    pub fn std_dev(&self) -> f64 {
        self.variance.max(0.0).sqrt()
    }
}

/// Anything that predicts a metric at a normalized configuration under a context.
pub trait Surrogate: Send + Sync {
    fn predict(&self, unit: &[f64], context: &Context) -> Result<Prediction>;
}
