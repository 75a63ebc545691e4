//! Gradient chain rule, sub-space size control and task distances.

use otune_core::agd::objective_gradient;
use otune_core::history::Context;
use otune_core::meta::{ensemble_weights, surrogate_distance};
use otune_core::stats::{kendall_distance, kendall_tau};
use otune_core::subspace::{update_size, SubSpaceState};
use otune_core::surrogate::{Prediction, Surrogate};
use proptest::prelude::*;

fn t(x: &[f64]) -> f64 {
    3.0 + x[0].exp() + x[1] * x[1]
}

fn r(x: &[f64]) -> f64 {
    1.0 + 2.0 * x[0] * x[0] + x[1].cosh()
}

fn objective(x: &[f64], beta: f64) -> f64 {
    t(x).powf(beta) * r(x).powf(1.0 - beta)
}

struct Values(Vec<f64>);

impl Surrogate for Values {
    fn predict(&self, x: &[f64], _: &Context) -> otune_core::Result<Prediction> {
        Ok(Prediction { mean: self.0[x[0] as usize], variance: 1.0 })
    }
}

fn probes(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| vec![i as f64]).collect()
}

#[test]
fn distance_reference_values() {
    let d = |a: Vec<f64>, b: Vec<f64>| {
        let n = a.len();
        surrogate_distance(&Values(a), &Values(b), &probes(n), &Context::default()).unwrap()
    };
    assert_eq!(d(vec![1.0, 2.0, 3.0], vec![1.0, 2.0, 3.0]), 0.0);
    assert_eq!(d(vec![1.0, 2.0, 3.0, 4.0], vec![4.0, 3.0, 2.0, 1.0]), 1.0);
    assert_eq!(d(vec![1.0, 2.0, 3.0], vec![1.0, 3.0, 2.0]), 1.0 / 3.0);
    assert!(surrogate_distance(&Values(vec![1.0]), &Values(vec![1.0]), &probes(1), &Context::default()).is_err());
}

#[test]
fn controller_sequence_from_default() {
    let mut s = SubSpaceState::new(20);
    let outcomes = [true, true, true, false, true, true, true, false, false, false, false, false];
    let ks: Vec<usize> = outcomes
        .iter()
        .map(|o| {
            s.update(*o);
            s.k
        })
        .collect();
    assert_eq!(ks, [10, 10, 12, 12, 12, 12, 14, 14, 14, 14, 14, 12]);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn chain_rule_matches_central_differences(x0 in -1.0..1.0f64, x1 in -1.0..1.0f64, beta in 0.0..=1.0f64) {
        let x = [x0, x1];
        let gt = [x0.exp(), 2.0 * x1];
        let gr = [4.0 * x0, x1.sinh()];
        let g = objective_gradient(t(&x), r(&x), &gt, &gr, beta).unwrap();
        let h = 1e-5;
        for d in 0..2 {
            let (mut up, mut down) = (x, x);
            up[d] += h;
            down[d] -= h;
            let fd = (objective(&up, beta) - objective(&down, beta)) / (2.0 * h);
            prop_assert!((g[d] - fd).abs() <= 1e-6 * fd.abs().max(1.0), "d{d}: {} vs {fd}", g[d]);
        }
    }

    #[test]
    fn subspace_size_stays_in_range_and_moves_by_two(n in 1usize..40, outcomes in prop::collection::vec(any::<bool>(), 0..120)) {
        let mut s = SubSpaceState::new(n);
        for o in outcomes {
            let next = update_size(&s, o);
            prop_assert!(next.k >= next.k_min && next.k <= next.k_max);
            prop_assert!(next.k.abs_diff(s.k) <= 2);
            prop_assert!(next.success_count < next.tau_success && next.failure_count < next.tau_failure);
            if next.k != s.k {
                prop_assert_eq!((next.success_count, next.failure_count), (0, 0));
            }
            s.update(o);
            prop_assert_eq!(&s, &next);
        }
    }

    #[test]
    fn distance_is_a_bounded_symmetric_rank_measure(a in prop::collection::vec(-10.0..10.0f64, 2..20), shift in -5.0..5.0f64, scale in 0.1..10.0f64) {
        let n = a.len();
        let b: Vec<f64> = a.iter().rev().map(|v| v * 0.5 + 1.0).collect();
        let d = |x: &[f64], y: &[f64]| surrogate_distance(&Values(x.to_vec()), &Values(y.to_vec()), &probes(n), &Context::default()).unwrap();
        let ab = d(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(ab.to_bits(), d(&b, &a).to_bits());
        // only the ordering matters
        let moved: Vec<f64> = a.iter().map(|v| v * scale + shift).collect();
        prop_assert_eq!(d(&a, &moved), kendall_distance(&a, &a));
        prop_assert!((ab - (1.0 - kendall_tau(&a, &b)) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn ensemble_weights_form_a_distribution(ds in prop::collection::vec(0.0..=1.0f64, 0..8), current in 0.0..=1.0f64) {
        let w = ensemble_weights(&ds, current).unwrap();
        let total: f64 = w.base.iter().sum::<f64>() + w.current;
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(w.base.iter().all(|v| *v >= 0.0));
        // closer tasks never weigh less
        for i in 0..ds.len() {
            for j in 0..ds.len() {
                if ds[i] < ds[j] {
                    prop_assert!(w.base[i] >= w.base[j]);
                }
            }
        }
    }
}
