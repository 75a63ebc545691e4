use serde::{Deserialize, Serialize};

use super::gp::{FitOptions, GaussianProcess};
use super::kernel::{DimKind, KernelSpec};
use super::{Prediction, Surrogate};
use crate::error::{Error, Result};
use crate::history::Context;
use crate::space::{ConfigurationSpace, Configuration};

/// One training example: normalized configuration, context and target.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub unit: Vec<f64>,
    pub context: Context,
    pub target: f64,
}

impl Sample {
    pub fn new(unit: Vec<f64>, context: Context, target: f64) -> Self {
        Sample {
            unit,
            context,
            target,
        }
    }

    pub fn from_config(
        space: &ConfigurationSpace,
        config: &Configuration,
        context: Context,
        target: f64,
    ) -> Result<Self> {
        Ok(Sample::new(space.normalize(config)?, context, target))
    }
}

/// Maps a [`Context`] to kernel features.
///
/// Data size becomes one feature, `ln(ds)` min-max scaled over the training
/// set. A period position becomes two features `(sin, cos)` so the end of a
/// cycle sits next to its start. A feature is used only when every training
/// sample carries it.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContextEncoder {
    /// (min ln ds, max ln ds, mean ln ds)
    data_size: Option<(f64, f64, f64)>,
    period: bool,
}

impl ContextEncoder {
    pub fn fit<'a>(contexts: impl IntoIterator<Item = &'a Context>) -> Self {
        let contexts: Vec<&Context> = contexts.into_iter().collect();
        let all_ds = !contexts.is_empty()
            && contexts
                .iter()
                .all(|c| c.data_size.is_some_and(|d| d > 0.0 && d.is_finite()));
        let data_size = all_ds.then(|| {
            let logs: Vec<f64> = contexts.iter().filter_map(|c| c.data_size).map(f64::ln).collect();
            let lo = logs.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = logs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi, logs.iter().sum::<f64>() / logs.len() as f64)
        });
        let period = !contexts.is_empty() && contexts.iter().all(|c| c.period.is_some());
        ContextEncoder { data_size, period }
    }

    pub fn width(&self) -> usize {
        usize::from(self.data_size.is_some()) + 2 * usize::from(self.period)
    }

    pub fn encode_into(&self, ctx: &Context, out: &mut Vec<f64>) {
        if let Some((lo, hi, mean)) = self.data_size {
            let l = ctx
                .data_size
                .filter(|d| *d > 0.0 && d.is_finite())
                .map(f64::ln)
                .unwrap_or(mean);
            out.push(if hi > lo { (l - lo) / (hi - lo) } else { 0.5 });
        }
        if self.period {
            let p = ctx.period.unwrap_or(0.0);
            let a = 2.0 * std::f64::consts::PI * p;
            out.push(0.5 + 0.5 * a.sin());
            out.push(0.5 + 0.5 * a.cos());
        }
    }
}

/// A GP over normalized configurations plus encoded context.
#[derive(Clone, Debug)]
pub struct GpSurrogate {
    gp: GaussianProcess,
    dims: usize,
    encoder: ContextEncoder,
}

impl GpSurrogate {
    /// Kernel layout for a space: numeric/categorical per parameter, then context features.
    pub fn kernel_for(space: &ConfigurationSpace, encoder: &ContextEncoder) -> KernelSpec {
        let mut kinds: Vec<DimKind> = space
            .params()
            .iter()
            .map(|p| {
                if p.is_numeric() {
                    DimKind::Numeric
                } else {
                    DimKind::Categorical
                }
            })
            .collect();
        kinds.extend(std::iter::repeat_n(DimKind::Context, encoder.width()));
        KernelSpec::new(kinds)
    }

    /// Fits with hyperparameters chosen by marginal likelihood.
    pub fn fit(space: &ConfigurationSpace, samples: &[Sample], opts: &FitOptions) -> Result<Self> {
        let encoder = ContextEncoder::fit(samples.iter().map(|s| &s.context));
        let kernel = Self::kernel_for(space, &encoder);
        Self::fit_encoded(space.dimension(), encoder, samples, kernel, opts)
    }

    /// Fits with an explicit kernel; its dimension must cover the context features.
    pub fn fit_with_kernel(
        space: &ConfigurationSpace,
        samples: &[Sample],
        kernel: KernelSpec,
        opts: &FitOptions,
    ) -> Result<Self> {
        let encoder = ContextEncoder::fit(samples.iter().map(|s| &s.context));
        Self::fit_encoded(space.dimension(), encoder, samples, kernel, opts)
    }

    fn fit_encoded(
        dims: usize,
        encoder: ContextEncoder,
        samples: &[Sample],
        kernel: KernelSpec,
        opts: &FitOptions,
    ) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("empty history".into()));
        }
        if kernel.dim() != dims + encoder.width() {
            return Err(Error::Shape(format!(
                "kernel has {} dimensions, inputs have {}",
                kernel.dim(),
                dims + encoder.width()
            )));
        }
        let mut inputs = Vec::with_capacity(samples.len());
        for s in samples {
            if s.unit.len() != dims {
                return Err(Error::Shape(format!(
                    "sample of length {} in a {dims}-dimensional space",
                    s.unit.len()
                )));
            }
            let mut x = s.unit.clone();
            encoder.encode_into(&s.context, &mut x);
            inputs.push(x);
        }
        let targets: Vec<f64> = samples.iter().map(|s| s.target).collect();
        let gp = GaussianProcess::fit(inputs, &targets, kernel, opts)?;
        Ok(GpSurrogate { gp, dims, encoder })
    }

    pub fn gp(&self) -> &GaussianProcess {
        &self.gp
    }

    pub fn encoder(&self) -> &ContextEncoder {
        &self.encoder
    }

    pub fn features(&self, unit: &[f64], context: &Context) -> Result<Vec<f64>> {
        if unit.len() != self.dims {
            return Err(Error::Shape(format!(
                "point of length {} for a {}-dimensional space",
                unit.len(),
                self.dims
            )));
        }
        let mut x = unit.to_vec();
        self.encoder.encode_into(context, &mut x);
        Ok(x)
    }

    /// Prediction in the model's standardized target units.
    pub fn predict_standardized(&self, unit: &[f64], context: &Context) -> Result<Prediction> {
        let (mean, variance) = self.gp.predict_standardized(&self.features(unit, context)?)?;
        Ok(Prediction { mean, variance })
    }

    pub fn predict_config(
        &self,
        space: &ConfigurationSpace,
        config: &Configuration,
        context: &Context,
    ) -> Result<Prediction> {
        self.predict(&space.normalize(config)?, context)
    }
}

impl Surrogate for GpSurrogate {
    fn predict(&self, unit: &[f64], context: &Context) -> Result<Prediction> {
        let (mean, variance) = self.gp.predict(&self.features(unit, context)?)?;
        Ok(Prediction { mean, variance })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::ParameterDef;

    fn space() -> ConfigurationSpace {
        ConfigurationSpace::new(vec![
            ParameterDef::real("x", 0.0, 1.0, 0.5).unwrap(),
            ParameterDef::categorical("c", &["a", "b"], "a").unwrap(),
        ])
        .unwrap()
    }

    #[test]
    fn encoder_layouts() {
        let e = ContextEncoder::fit([&Context::data_size(1.0), &Context::data_size(4.0)]);
        assert_eq!(e.width(), 1);
        let mut v = vec![];
        e.encode_into(&Context::data_size(2.0), &mut v);
        assert!((v[0] - 0.5).abs() < 1e-12);

        let p = ContextEncoder::fit([&Context::period(0.0), &Context::period(0.5)]);
        assert_eq!(p.width(), 2);
        let (mut a, mut b) = (vec![], vec![]);
        p.encode_into(&Context::period(0.0), &mut a);
        p.encode_into(&Context::period(0.999_999), &mut b);
        assert!((a[0] - b[0]).abs() < 1e-4 && (a[1] - b[1]).abs() < 1e-4);

        let mixed = ContextEncoder::fit([&Context::data_size(1.0), &Context::default()]);
        assert_eq!(mixed.width(), 0);
    }

    #[test]
    fn surrogate_predicts_with_context() {
        let s = space();
        let samples: Vec<Sample> = (0..8)
            .map(|i| {
                let x = i as f64 / 7.0;
                let ds = 1.0 + (i % 3) as f64;
                Sample::new(vec![x, (i % 2) as f64], Context::data_size(ds), x * ds)
            })
            .collect();
        let m = GpSurrogate::fit(&s, &samples, &FitOptions::default()).unwrap();
        assert_eq!(m.gp().dim(), 3);
        let p = m.predict(&[1.0, 1.0], &Context::data_size(2.0)).unwrap();
        assert!(p.variance >= 0.0 && p.mean.is_finite());
        assert!(matches!(
            m.predict(&[1.0], &Context::default()),
            Err(Error::Shape(_))
        ));
    }
}
