use otune_core::engine::{Measurement, ResourceFunctionSpec, TaskDefinition, Tuner, TunerOptions, CORES, INSTANCES, MEMORY};
use otune_core::history::{objective, Context};
use otune_core::sampling::scrambled_halton;
use otune_core::space::{Configuration, ConfigurationSpace, ParameterDef, Value};
use otune_core::subspace::{importance_from_data, ImportanceOptions};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Squared L2-star discrepancy by Warnock's closed form.
fn l2_star_squared(points: &[Vec<f64>]) -> f64 {
    let n = points.len() as f64;
    let d = points[0].len() as i32;
    let single: f64 = points.iter().map(|p| p.iter().map(|x| 1.0 - x * x).product::<f64>()).sum();
    let mut double = 0.0;
    for a in points {
        for b in points {
            double += a.iter().zip(b).map(|(x, y)| 1.0 - x.max(*y)).product::<f64>();
        }
    }
    3f64.powi(-d) - 2f64.powi(1 - d) / n * single + double / (n * n)
}

#[test]
fn halton_points_are_more_uniform_than_random_ones() {
    let (dim, n) = (5, 128);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for seed in 0..5 {
        let h = l2_star_squared(&scrambled_halton(dim, n, seed));
        let random: Vec<Vec<f64>> = (0..n).map(|_| (0..dim).map(|_| rng.random::<f64>()).collect()).collect();
        let r = l2_star_squared(&random);
        assert!(h < r, "seed {seed}: halton {h} random {r}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn halton_points_are_distinct_and_inside_the_cube(dim in 1usize..12, n in 1usize..200, seed in any::<u64>()) {
        let pts = scrambled_halton(dim, n, seed);
        prop_assert_eq!(pts.len(), n);
        prop_assert!(pts.iter().all(|p| p.len() == dim && p.iter().all(|x| (0.0..1.0).contains(x))));
        for i in 0..n {
            for j in 0..i {
                prop_assert_ne!(&pts[i], &pts[j]);
            }
        }
        prop_assert_eq!(pts, scrambled_halton(dim, n, seed));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn importance_is_non_negative_and_finds_the_driver(seed in any::<u64>(), weight in 2.0..10.0f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..60).map(|_| (0..4).map(|_| rng.random::<f64>()).collect()).collect();
        let y: Vec<f64> = x.iter().map(|r| weight * r[2] + 0.1 * r[0]).collect();
        let names: Vec<String> = ["a", "b", "c", "d"].iter().map(|s| s.to_string()).collect();
        let rep = importance_from_data(&x, &y, &names, &ImportanceOptions::default()).unwrap();
        prop_assert!(rep.scores.values().all(|s| *s >= 0.0 && s.is_finite()));
        let top = rep.scores.iter().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0;
        prop_assert_eq!(top.as_str(), "c");
    }
}

fn space() -> ConfigurationSpace {
    ConfigurationSpace::new(vec![
        ParameterDef::integer(INSTANCES, 1, 16, 4).unwrap(),
        ParameterDef::integer(MEMORY, 1, 32, 8).unwrap().log().unwrap(),
        ParameterDef::real("spark.memory.fraction", 0.3, 0.9, 0.6).unwrap(),
        ParameterDef::categorical("spark.serializer", &["java", "kryo"], "java").unwrap(),
    ])
    .unwrap()
}

fn definition(budget: u64, seed: u64) -> TaskDefinition {
    TaskDefinition {
        task_id: "synthetic".into(),
        space_ref: "inline".into(),
        beta: 0.5,
        constraints: vec![],
        budget,
        seed,
        resource_function: ResourceFunctionSpec::new(0.25).with_fixed(CORES, 2.0),
    }
}

fn runtime(c: &Configuration) -> f64 {
    let inst = c.get(INSTANCES).unwrap().as_f64().unwrap();
    let mem = c.get(MEMORY).unwrap().as_f64().unwrap();
    let frac = c.get("spark.memory.fraction").unwrap().as_f64().unwrap();
    let kryo = *c.get("spark.serializer").unwrap() == Value::Choice("kryo".into());
    400.0 / inst + 60.0 / mem.sqrt() + 30.0 * (frac - 0.7).powi(2) + if kryo { 0.0 } else { 15.0 }
}

fn run(budget: u64, seed: u64) -> Tuner {
    let mut t = Tuner::new(definition(budget, seed), space(), TunerOptions::default()).unwrap();
    for _ in 0..budget {
        if t.should_stop() {
            break;
        }
        let s = t.suggest(&Context::default(), None).unwrap();
        // asking twice before observing hands back the same suggestion
        assert_eq!(t.suggest(&Context::default(), None).unwrap(), s);
        t.observe(Measurement::new(runtime(&s.configuration), Context::default())).unwrap();
    }
    t
}

#[test]
fn tuning_is_deterministic_under_a_seed() {
    let a = run(12, 5);
    let b = run(12, 5);
    assert_eq!(a.history(), b.history());
    let c = run(12, 6);
    assert_ne!(a.history(), c.history());
}

#[test]
fn replay_reconstructs_the_live_state() {
    let live = run(12, 3);
    let mut replayed = Tuner::replay(definition(12, 3), space(), TunerOptions::default(), live.history().to_vec()).unwrap();
    assert_eq!(replayed.history(), live.history());
    assert_eq!(replayed.status(), live.status());
    assert_eq!(replayed.subspace_state(), live.subspace_state());
    assert_eq!(replayed.epoch(), live.epoch());
    assert_eq!(replayed.thresholds(), live.thresholds());
    assert_eq!(replayed.next_iteration(), live.next_iteration());
    if !live.should_stop() {
        let mut live = live;
        assert_eq!(replayed.suggest(&Context::default(), None).unwrap(), live.suggest(&Context::default(), None).unwrap());
    }
}

#[test]
fn the_incumbent_improves_on_the_default() {
    let t = run(20, 11);
    let d = space().default_configuration();
    let rf = &t.definition().resource_function;
    let resource = rf.quantity(&d, INSTANCES).unwrap() * (rf.quantity(&d, CORES).unwrap() + 0.25 * rf.quantity(&d, MEMORY).unwrap());
    let baseline = objective(runtime(&d), resource, 0.5).unwrap();
    let best = t.incumbent().unwrap();
    assert!(best.objective < 0.9 * baseline, "{} vs {baseline}", best.objective);
}
