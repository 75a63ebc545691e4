use otune_core::acquisition::{eic, expected_improvement, upper_bound, ConstraintModel, ConstraintSpec, SafetyConfig};
use otune_core::history::Context;
use otune_core::surrogate::{Prediction, Surrogate};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Fixed(Prediction);

impl Surrogate for Fixed {
    fn predict(&self, _: &[f64], _: &Context) -> otune_core::Result<Prediction> {
        Ok(self.0)
    }
}

/// Monte-Carlo estimate of EI and its standard error.
fn monte_carlo(mu: f64, sigma: f64, y_best: f64, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..draws {
        let z: f64 = StandardNormal.sample(&mut rng);
        let v = (y_best - mu - sigma * z).max(0.0);
        s += v;
        s2 += v * v;
    }
    let m = s / draws as f64;
    (m, ((s2 / draws as f64 - m * m) / draws as f64).sqrt())
}

#[test]
fn closed_form_agrees_with_sampling_at_reference_points() {
    for (i, (mu, sigma, best)) in [(0.0, 1.0, 0.0), (1.0, 0.5, 0.2), (-2.0, 2.0, -1.0), (0.3, 0.1, 0.5)].into_iter().enumerate() {
        let ei = expected_improvement(mu, sigma * sigma, best).unwrap();
        let (m, se) = monte_carlo(mu, sigma, best, 400_000, 17 + i as u64);
        assert!((ei - m).abs() <= 4.0 * se, "({mu},{sigma},{best}): {ei} vs {m} ± {se}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn ei_is_bounded_by_its_limits(mu in -10.0..10.0f64, sigma in 1e-3..10.0f64, best in -10.0..10.0f64) {
        let ei = expected_improvement(mu, sigma * sigma, best).unwrap();
        // below by the deterministic improvement, above by it plus the spread
        prop_assert!(ei >= (best - mu).max(0.0) - 1e-12);
        prop_assert!(ei <= (best - mu).max(0.0) + sigma * 0.398_942_280_401_432_7 + 1e-12);
    }

    #[test]
    fn ei_grows_with_uncertainty_and_falls_with_the_mean(mu in -5.0..5.0f64, sigma in 0.01..5.0f64, best in -5.0..5.0f64, d in 0.01..1.0f64) {
        let ei = |m: f64, s: f64| expected_improvement(m, s * s, best).unwrap();
        prop_assert!(ei(mu, sigma + d) >= ei(mu, sigma) - 1e-12);
        prop_assert!(ei(mu + d, sigma) <= ei(mu, sigma) + 1e-12);
    }

    #[test]
    fn constraints_only_scale_ei_down(
        mu in -5.0..5.0f64,
        sigma in 0.01..5.0f64,
        best in -5.0..5.0f64,
        metrics in prop::collection::vec((0.0..10.0f64, 0.0..4.0f64, 0.0..10.0f64), 0..4),
    ) {
        let objective = Fixed(Prediction { mean: mu, variance: sigma * sigma });
        let models: Vec<(Fixed, ConstraintSpec)> = metrics
            .iter()
            .map(|(m, v, t)| (Fixed(Prediction { mean: *m, variance: *v }), ConstraintSpec::new("m", *t).unwrap()))
            .collect();
        let cm: Vec<ConstraintModel<'_>> = models.iter().map(|(m, s)| ConstraintModel { model: m, spec: s }).collect();
        let ctx = Context::default();
        let ei = expected_improvement(mu, sigma * sigma, best).unwrap();
        let constrained = eic(&[0.0], &ctx, &objective, &cm, best).unwrap();
        prop_assert!(constrained >= 0.0 && constrained <= ei);
        prop_assert_eq!(eic(&[0.0], &ctx, &objective, &[], best).unwrap().to_bits(), ei.to_bits());
    }

    #[test]
    fn upper_bound_is_monotone_in_gamma(mean in -5.0..5.0f64, var in 0.0..4.0f64, g1 in 0.01..=1.0f64, g2 in 0.01..=1.0f64) {
        let (lo, hi) = if g1 <= g2 { (g1, g2) } else { (g2, g1) };
        let a = upper_bound(mean, var, &SafetyConfig::new(lo).unwrap());
        let b = upper_bound(mean, var, &SafetyConfig::new(hi).unwrap());
        prop_assert!(a <= b && a >= mean);
    }
}
