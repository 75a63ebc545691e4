mod common;

use std::collections::BTreeSet;
use std::sync::{Arc, Barrier, Mutex};
use std::thread;

use common::{context_for, job, reference_task, run};
use otune_core::engine::Suggestion;
use otune_service::{serve, Client, ObserveAck, Service};
use serde_json::{json, Value};

const CLIENTS: usize = 8;
const ROUNDS: usize = 6;

/// All clients of one task suggest at once, then all report the same
/// result for that iteration, as retrying workers would.
fn hammer(addr: std::net::SocketAddr, id: &str, seed: u64) {
    let mut c = Client::connect(addr).unwrap();
    let r = c.call("create-task", Some(id), reference_task(id, 20, seed)).unwrap();
    assert!(r.is_ok(), "{r:?}");
    let job = job(seed);
    let barrier = Barrier::new(CLIENTS);
    let suggestions = Mutex::new(Vec::new());
    let acks = Mutex::new(Vec::new());
    thread::scope(|scope| {
        for _ in 0..CLIENTS {
            scope.spawn(|| {
                let mut c = Client::connect(addr).unwrap();
                for round in 0..ROUNDS {
                    let iteration = round as u64 + 1;
                    let ctx = serde_json::to_value(context_for(&job, iteration)).unwrap();
                    barrier.wait();
                    let r = c.call("suggest", Some(id), json!({ "context": ctx })).unwrap();
                    assert!(r.is_ok(), "{r:?}");
                    let s: Suggestion = serde_json::from_value(r.payload.clone()).unwrap();
                    suggestions.lock().unwrap().push((round, r.payload));
                    barrier.wait();
                    let mut body = serde_json::to_value(run(&job, &s)).unwrap();
                    body["iteration"] = json!(s.iteration);
                    let r = c.call("observe", Some(id), body).unwrap();
                    assert!(r.is_ok(), "{r:?}");
                    let ack: ObserveAck = serde_json::from_value(r.payload).unwrap();
                    acks.lock().unwrap().push((round, ack));
                }
            });
        }
    });

    let suggestions = suggestions.into_inner().unwrap();
    let acks = acks.into_inner().unwrap();
    for round in 0..ROUNDS {
        let distinct: BTreeSet<String> =
            suggestions.iter().filter(|(r, _)| *r == round).map(|(_, p)| p.to_string()).collect();
        assert_eq!(distinct.len(), 1, "round {round}: {distinct:?}");
        let fresh: Vec<&ObserveAck> = acks.iter().filter(|(r, a)| *r == round && !a.duplicate).map(|(_, a)| a).collect();
        assert_eq!(fresh.len(), 1, "round {round}");
        assert_eq!(fresh[0].history_length, round + 1);
        assert_eq!(fresh[0].iteration, round as u64 + 1);
    }
    let status = c.call("status", Some(id), Value::Null).unwrap();
    assert_eq!(status.payload["observations"], json!(ROUNDS));
    assert_eq!(status.payload["next_iteration"], json!(ROUNDS + 1));
}

#[test]
fn concurrent_clients_share_one_outstanding_suggestion() {
    let dir = tempfile::tempdir().unwrap();
    let service = Arc::new(Service::open(dir.path()).unwrap());
    let server = serve(service.clone(), "127.0.0.1:0").unwrap();
    let addr = server.addr();
    // two tasks at once, so per-task ordering is exercised alongside
    // cross-task parallelism
    thread::scope(|scope| {
        scope.spawn(|| hammer(addr, "alpha", 1));
        scope.spawn(|| hammer(addr, "beta", 2));
    });
    server.shutdown();

    // the concurrent run recorded exactly what a sequential one would
    let serial = tempfile::tempdir().unwrap();
    let s = Service::open(serial.path()).unwrap();
    for (id, seed) in [("alpha", 1), ("beta", 2)] {
        common::create(&s, reference_task(id, 20, seed));
        common::drive(&s, id, &job(seed), ROUNDS);
        assert_eq!(service.snapshot(id).unwrap(), s.snapshot(id).unwrap());
    }
}

#[test]
fn wire_errors_carry_a_class() {
    let dir = tempfile::tempdir().unwrap();
    let server = serve(Arc::new(Service::open(dir.path()).unwrap()), "127.0.0.1:0").unwrap();
    let mut c = Client::connect(server.addr()).unwrap();

    let mut bad = reference_task("x", 5, 1);
    bad["definition"]["beta"] = json!(1.5);
    let r = c.call("create-task", None, bad).unwrap();
    assert_eq!(r.class(), Some("invalid"));
    assert!(r.payload["message"].as_str().unwrap().contains("beta"));

    assert!(c.call("create-task", None, reference_task("x", 5, 1)).unwrap().is_ok());
    let again = c.call("create-task", None, reference_task("x", 5, 1)).unwrap();
    assert_eq!(again.payload, json!({"task_id": "x", "status": "initializing"}));
    assert_eq!(c.call("create-task", None, reference_task("x", 6, 1)).unwrap().class(), Some("conflict"));

    assert_eq!(c.call("suggest", Some("nope"), Value::Null).unwrap().class(), Some("not_found"));
    assert_eq!(c.call("best", Some("x"), Value::Null).unwrap().class(), Some("not_ready"));
    let r = c.call("observe", Some("x"), json!({"runtime": 5.0})).unwrap();
    assert_eq!(r.class(), Some("state"));

    let first = c.call("suggest", Some("x"), Value::Null).unwrap();
    assert_eq!(first.payload["iteration"], json!(1));
    assert_eq!(c.call("observe", Some("x"), json!({"runtime": -1.0})).unwrap().class(), Some("invalid"));
    // a rejected observe leaves the suggestion outstanding
    assert_eq!(c.call("suggest", Some("x"), Value::Null).unwrap().payload, first.payload);
    let ack = c.call("observe", Some("x"), json!({"runtime": 12.0})).unwrap();
    assert_eq!(ack.payload["history_length"], json!(1));
    assert_eq!(c.call("suggest", Some("x"), Value::Null).unwrap().payload["iteration"], json!(2));

    // a run the service never suggested
    let imported = json!({"imported": true, "configuration": first.payload["configuration"], "runtime": 11.0});
    assert_eq!(c.call("observe", Some("x"), imported).unwrap().payload["history_length"], json!(2));
    assert_eq!(c.call("observe", Some("x"), json!({"iteration": 9, "runtime": 1.0})).unwrap().class(), Some("state"));

    let history = c.call("export-history", Some("x"), Value::Null).unwrap();
    let obs = history.payload["observations"].as_array().unwrap();
    assert_eq!(obs.len(), 2);
    assert_eq!(obs[1]["source"], json!("imported"));
    assert_eq!(history.payload["task"]["definition"]["task_id"], json!("x"));
    server.shutdown();
}

#[test]
fn stopped_task_keeps_returning_the_incumbent() {
    let dir = tempfile::tempdir().unwrap();
    let s = Service::open(dir.path()).unwrap();
    let id = common::create(&s, reference_task("t", 6, 4));
    common::drive(&s, &id, &job(4), 6);
    assert_eq!(s.status(&id).unwrap().status, otune_core::engine::TaskStatus::Stopped);
    let best = s.best(&id).unwrap();
    let next = s.status(&id).unwrap().next_iteration;
    let sug = s.suggest(&id, &context_for(&job(4), next)).unwrap();
    assert_eq!(sug.source, otune_core::history::Source::Best);
    assert_eq!(sug.configuration, best.configuration);
    assert_eq!(sug.iteration, 7);
}
