use otune_core::engine::{ResourceFunctionSpec, CORES, INSTANCES, MEMORY};
use otune_core::space::{Configuration, Value};
use otune_harness::families::{families, family_resource, family_space, reference_job, reference_resource};
use otune_harness::simulator::{Drift, MemoryModel};
use otune_harness::{simulate_execution, simulate_noiseless, SyntheticJobSpec};
use proptest::prelude::*;

fn cluster(instances: i64, cores: i64, memory: i64) -> Configuration {
    let mut c = Configuration::new();
    c.insert(INSTANCES, Value::Int(instances));
    c.insert(CORES, Value::Int(cores));
    c.insert(MEMORY, Value::Int(memory));
    c
}

fn job(p: f64, shuffle: f64, need: Option<f64>, noise: f64) -> SyntheticJobSpec {
    SyntheticJobSpec {
        family: "prop".into(),
        base_work: 50.0,
        parallel_fraction: p,
        data_size: 1.0,
        alpha: 1.0,
        shuffle,
        memory: need.map(|need| MemoryModel { need, kappa: 4.0, oom_below: None }),
        responses: Vec::new(),
        noise,
        drift: Drift::none(),
        seed: 5,
    }
}

#[test]
fn amdahl_degenerate_and_ideal_scaling() {
    let r = ResourceFunctionSpec::new(0.5);
    let serial = job(0.0, 0.0, None, 0.0);
    let a = simulate_noiseless(&serial, &cluster(1, 1, 4), 0, &r).unwrap().runtime;
    let b = simulate_noiseless(&serial, &cluster(16, 4, 4), 0, &r).unwrap().runtime;
    assert_eq!(a, b);

    let ideal = job(1.0, 0.0, None, 0.0);
    let one = simulate_noiseless(&ideal, &cluster(2, 2, 4), 0, &r).unwrap().runtime;
    let two = simulate_noiseless(&ideal, &cluster(4, 2, 4), 0, &r).unwrap().runtime;
    assert!((one / two - 2.0).abs() < 1e-12);
}

#[test]
fn resource_comes_from_the_engine_function() {
    let r = reference_resource();
    let mut c = Configuration::new();
    c.insert(INSTANCES, Value::Int(3));
    c.insert(MEMORY, Value::Int(2));
    let run = simulate_noiseless(&reference_job(), &c, 0, &r).unwrap();
    // cores are pinned at 2 by the reference resource function
    assert!((run.resource - (3.0 * 2.0 + 0.25 * 3.0 * 2.0)).abs() < 1e-12);
    assert_eq!(run.features.values.len(), 12);
}

#[test]
fn every_family_config_runs_positive_or_fails_cleanly() {
    let space = family_space();
    let r = family_resource();
    let configs = otune_core::space::sample_low_discrepancy(&space, 64, 3).unwrap();
    for f in families() {
        for (i, c) in configs.iter().enumerate() {
            let run = simulate_execution(&f, c, i as u64, &r).unwrap();
            if run.failed {
                assert!(run.runtime.is_infinite());
            } else {
                assert!(run.runtime > 0.0 && run.runtime.is_finite(), "{} {c}", f.family);
            }
        }
    }
}

proptest! {
    #[test]
    fn runtime_decreases_with_parallelism_below_saturation(
        p in 0.05f64..1.0,
        shuffle in 0.0f64..0.002,
        instances in 1i64..16,
        cores in 1i64..4,
        memory in 1i64..16,
        need in prop::option::of(1.0f64..64.0),
    ) {
        let spec = job(p, shuffle, need, 0.0);
        let r = ResourceFunctionSpec::new(0.5);
        let n = (instances * cores) as f64;
        let wider_n = ((instances + 1) * cores) as f64;
        // p/n + shuffle·n falls from n to n' exactly when n·n' < p/shuffle
        prop_assume!(shuffle == 0.0 || n * wider_n < p / shuffle);
        let base = simulate_noiseless(&spec, &cluster(instances, cores, memory), 0, &r).unwrap().runtime;
        let wider = simulate_noiseless(&spec, &cluster(instances + 1, cores, memory), 0, &r).unwrap().runtime;
        prop_assert!(wider < base, "{wider} !< {base}");
    }

    #[test]
    fn repeated_runs_are_bit_identical(
        instances in 1i64..16,
        cores in 1i64..4,
        memory in 1i64..16,
        iteration in 0u64..100,
        seed in any::<u64>(),
    ) {
        let mut spec = job(0.9, 0.001, Some(8.0), 0.1);
        spec.seed = seed;
        spec.drift = Drift::default();
        let r = ResourceFunctionSpec::new(0.5);
        let c = cluster(instances, cores, memory);
        let a = simulate_execution(&spec, &c, iteration, &r).unwrap();
        let b = simulate_execution(&spec, &c, iteration, &r).unwrap();
        prop_assert_eq!(a.runtime.to_bits(), b.runtime.to_bits());
        prop_assert_eq!(a, b);
    }

    #[test]
    fn noise_is_multiplicative_around_the_noiseless_runtime(
        instances in 1i64..16,
        iteration in 0u64..50,
    ) {
        let spec = job(0.9, 0.0, Some(8.0), 0.05);
        let r = ResourceFunctionSpec::new(0.5);
        let c = cluster(instances, 2, 4);
        let noisy = simulate_execution(&spec, &c, iteration, &r).unwrap().runtime;
        let clean = simulate_noiseless(&spec, &c, iteration, &r).unwrap().runtime;
        // six sigma of a lognormal with sigma 0.05
        prop_assert!((noisy / clean).ln().abs() < 0.3);
    }
}
