#![allow(dead_code)]

use std::path::PathBuf;

use otune_core::engine::{Measurement, Suggestion};
use otune_core::history::Context;
use otune_harness::families::{reference_job, reference_resource};
use otune_harness::simulator::{simulate_execution, SyntheticJobSpec};
use otune_service::{CreateTask, Service};
use serde_json::{json, Value};

pub fn fixture(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../fixtures").join(name)
}

/// A task on the two-parameter reference space with a 2x runtime bound.
pub fn reference_task(id: &str, budget: u64, seed: u64) -> Value {
    json!({
        "definition": {
            "task_id": id,
            "space_ref": "builtin:reference",
            "beta": 0.5,
            "budget": budget,
            "seed": seed,
            "constraints": [{"metric": "runtime"}],
            "resource_function": serde_json::to_value(reference_resource()).unwrap()
        },
        "options": {"early_stopping": false}
    })
}

pub fn create(service: &Service, body: Value) -> String {
    let req: CreateTask = serde_json::from_value(body).unwrap();
    service.create_task(req).unwrap().0
}

pub fn job(seed: u64) -> SyntheticJobSpec {
    reference_job().reseeded(seed)
}

pub fn context_for(job: &SyntheticJobSpec, iteration: u64) -> Context {
    Context::data_size(job.data_size_at(iteration))
}

/// Executes a suggestion on the simulator.
pub fn run(job: &SyntheticJobSpec, s: &Suggestion) -> Measurement {
    simulate_execution(job, &s.configuration, s.iteration, &reference_resource()).unwrap().measurement()
}

/// `n` suggest/observe rounds against the simulator.
pub fn drive(service: &Service, id: &str, job: &SyntheticJobSpec, n: usize) {
    for _ in 0..n {
        let next = service.status(id).unwrap().next_iteration;
        let s = service.suggest(id, &context_for(job, next)).unwrap();
        service.observe(id, run(job, &s), None, None).unwrap();
    }
}
