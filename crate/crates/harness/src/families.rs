//! Built-in spaces and job families.

use std::collections::BTreeMap;

use otune_core::engine::{ResourceFunctionSpec, CORES, INSTANCES, MEMORY};
use otune_core::space::{ConfigurationSpace, ParameterDef};

use crate::simulator::{Drift, MemoryModel, ResponseCurve, SyntheticJobSpec};

pub const PARTITIONS: &str = "spark.sql.shuffle.partitions";
pub const MEMORY_FRACTION: &str = "spark.memory.fraction";
pub const CODEC: &str = "spark.io.compression.codec";

/// Names of the six reference families, in fixture order.
pub const FAMILIES: [&str; 6] = [
    "compute_bound",
    "shuffle_heavy",
    "memory_bound",
    "embarrassingly_parallel",
    "skewed",
    "drift_heavy",
];

/// The 8×8 instances × memory grid; cores are pinned by the resource function.
pub fn reference_space() -> ConfigurationSpace {
    ConfigurationSpace::new(vec![
        ParameterDef::integer(INSTANCES, 1, 8, 8).expect("valid"),
        ParameterDef::integer(MEMORY, 1, 8, 4).expect("valid"),
    ])
    .expect("valid")
}

/// `R = 2·instances + 0.25·instances·memory`.
pub fn reference_resource() -> ResourceFunctionSpec {
    ResourceFunctionSpec::new(0.25).with_fixed(CORES, 2.0)
}

/// A mostly parallel job with a 4 GB working set split over executors.
///
/// Small, cheap clusters give the best objective but run long, so with a
/// runtime bound of twice the default (8 executors × 4 GB) the unconstrained
/// optimum at 2 × 2 is unsafe and the safe optimum sits next to it.
pub fn reference_job() -> SyntheticJobSpec {
    SyntheticJobSpec {
        family: "reference".into(),
        base_work: 100.0,
        parallel_fraction: 0.9,
        data_size: 1.0,
        alpha: 1.0,
        shuffle: 0.0,
        memory: Some(MemoryModel { need: 4.0, kappa: 4.0, oom_below: None }),
        responses: Vec::new(),
        noise: 0.03,
        drift: Drift::none(),
        seed: 11,
    }
}

/// Six knobs shared by the job families.
pub fn family_space() -> ConfigurationSpace {
    let params = vec![
        ParameterDef::integer(INSTANCES, 1, 16, 4).expect("valid"),
        ParameterDef::integer(CORES, 1, 4, 2).expect("valid"),
        ParameterDef::integer(MEMORY, 1, 16, 4).expect("valid"),
        ParameterDef::integer(PARTITIONS, 8, 512, 200).expect("valid").log().expect("valid"),
        ParameterDef::real(MEMORY_FRACTION, 0.3, 0.9, 0.6).expect("valid"),
        ParameterDef::categorical(CODEC, &["lz4", "snappy", "zstd"], "lz4").expect("valid"),
    ];
    let ranking = [INSTANCES, MEMORY, MEMORY_FRACTION, PARTITIONS, CORES, CODEC];
    ConfigurationSpace::with_prior_ranking(params, ranking.iter().map(|s| s.to_string()).collect())
        .expect("valid")
}

pub fn family_resource() -> ResourceFunctionSpec {
    ResourceFunctionSpec::new(0.5)
}

fn quad(param: &str, optimum: f64, width: f64, weight: f64, log: bool) -> ResponseCurve {
    ResponseCurve::Quadratic { param: param.into(), optimum, width, weight, log }
}

fn choice(param: &str, penalties: &[(&str, f64)]) -> ResponseCurve {
    let penalties: BTreeMap<String, f64> = penalties.iter().map(|(k, v)| (k.to_string(), *v)).collect();
    ResponseCurve::Choice { param: param.into(), penalties }
}

fn memory(need: f64, oom_below: Option<f64>) -> Option<MemoryModel> {
    Some(MemoryModel { need, kappa: 4.0, oom_below })
}

/// One of [`FAMILIES`] over [`family_space`].
pub fn family(name: &str) -> Option<SyntheticJobSpec> {
    let base = SyntheticJobSpec {
        family: name.into(),
        base_work: 300.0,
        parallel_fraction: 0.95,
        data_size: 1.0,
        alpha: 1.0,
        shuffle: 0.0,
        memory: None,
        responses: Vec::new(),
        noise: 0.03,
        drift: Drift::default(),
        seed: 0,
    };
    let spec = match name {
        "compute_bound" => SyntheticJobSpec {
            base_work: 400.0,
            parallel_fraction: 0.97,
            shuffle: 0.0005,
            memory: memory(16.0, None),
            responses: vec![
                quad(MEMORY_FRACTION, 0.6, 0.3, 0.15, false),
                quad(PARTITIONS, 64.0, 1.5, 0.1, true),
                choice(CODEC, &[("snappy", 0.03), ("zstd", 0.06)]),
            ],
            seed: 101,
            ..base
        },
        "shuffle_heavy" => SyntheticJobSpec {
            parallel_fraction: 0.9,
            shuffle: 0.004,
            memory: memory(24.0, None),
            responses: vec![
                quad(PARTITIONS, 300.0, 1.0, 0.5, true),
                quad(MEMORY_FRACTION, 0.5, 0.3, 0.1, false),
                choice(CODEC, &[("lz4", 0.15), ("snappy", 0.2)]),
            ],
            seed: 102,
            ..base
        },
        "memory_bound" => SyntheticJobSpec {
            base_work: 250.0,
            parallel_fraction: 0.92,
            shuffle: 0.001,
            memory: memory(32.0, Some(0.35)),
            responses: vec![quad(MEMORY_FRACTION, 0.8, 0.3, 0.4, false)],
            seed: 103,
            ..base
        },
        "embarrassingly_parallel" => SyntheticJobSpec {
            base_work: 500.0,
            parallel_fraction: 0.995,
            memory: memory(8.0, None),
            responses: vec![choice(CODEC, &[("zstd", 0.02)])],
            seed: 104,
            ..base
        },
        "skewed" => SyntheticJobSpec {
            parallel_fraction: 0.75,
            shuffle: 0.002,
            memory: memory(24.0, None),
            responses: vec![quad(PARTITIONS, 450.0, 1.0, 0.8, true)],
            seed: 105,
            ..base
        },
        "drift_heavy" => SyntheticJobSpec {
            parallel_fraction: 0.93,
            alpha: 1.3,
            shuffle: 0.001,
            memory: memory(32.0, None),
            responses: vec![quad(MEMORY_FRACTION, 0.7, 0.3, 0.2, false)],
            noise: 0.05,
            drift: Drift { period: 24.0, amplitude: 0.6 },
            seed: 106,
            ..base
        },
        _ => return None,
    };
    Some(spec)
}

/// All six families in [`FAMILIES`] order.
pub fn families() -> Vec<SyntheticJobSpec> {
    FAMILIES.iter().map(|n| family(n).expect("known family")).collect()
}

/// A drift-free member `k` of family `name` with its own size and noise stream.
pub fn family_variant(name: &str, k: u64, work_scale: f64, data_size: f64) -> Option<SyntheticJobSpec> {
    let base = family(name)?;
    Some(SyntheticJobSpec {
        base_work: base.base_work * work_scale,
        data_size,
        drift: Drift::none(),
        seed: 1000 + 17 * k + base.seed,
        ..base
    })
}

/// An archive of past tasks drawn from two families, and a new task.
#[derive(Clone, Debug, PartialEq)]
pub struct MetaCorpus {
    pub archive: Vec<SyntheticJobSpec>,
    pub target: SyntheticJobSpec,
}

/// Four variants each of `other` and `target_family`, and an unseen
/// variant of `target_family` to tune.
pub fn two_cluster_corpus(other: &str, target_family: &str) -> Option<MetaCorpus> {
    let mut archive = Vec::with_capacity(8);
    for k in 0..4u64 {
        let scale = 0.8 + 0.1 * k as f64;
        let ds = 1.0 + 0.1 * k as f64;
        archive.push(family_variant(other, k, scale, ds)?);
        archive.push(family_variant(target_family, k, scale, ds)?);
    }
    let target = family_variant(target_family, 9, 1.05, 1.15)?;
    Some(MetaCorpus { archive, target })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn families_validate_against_their_space() {
        let space = family_space();
        for f in families() {
            f.validate(&space).unwrap();
        }
        reference_job().validate(&reference_space()).unwrap();
        assert!(family("nope").is_none());
        let corpus = two_cluster_corpus("compute_bound", "memory_bound").unwrap();
        assert_eq!(corpus.archive.len(), 8);
        assert!(corpus.archive.iter().all(|j| j.drift.amplitude == 0.0));
        assert!(!corpus.archive.contains(&corpus.target));
    }
}
