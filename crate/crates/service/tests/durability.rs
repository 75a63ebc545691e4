mod common;

use std::path::Path;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;

use common::{context_for, create, drive, job, reference_task, run};
use otune_service::store::{log_path, read_log, LogRecord};
use otune_service::{FaultHook, FaultPoint, Service, TaskSnapshot};
use proptest::prelude::*;

const BUDGET: u64 = 14;

/// A hook that fires once at `point` after being armed.
fn hook(point: FaultPoint) -> (FaultHook, Arc<AtomicBool>) {
    let armed = Arc::new(AtomicBool::new(false));
    let flag = armed.clone();
    let hook: FaultHook = Arc::new(move |p| p == point && flag.swap(false, Ordering::SeqCst));
    (hook, armed)
}

/// State of a task that ran `n` clean rounds.
fn clean_run(seed: u64, n: usize) -> TaskSnapshot {
    let dir = tempfile::tempdir().unwrap();
    let s = Service::open(dir.path()).unwrap();
    let id = create(&s, reference_task("t", BUDGET, seed));
    drive(&s, &id, &job(seed), n);
    s.snapshot(&id).unwrap()
}

fn every_line_parses(path: &Path) {
    let text = std::fs::read_to_string(path).unwrap();
    assert!(text.ends_with('\n'));
    for line in text.lines() {
        serde_json::from_str::<LogRecord>(line).unwrap();
    }
}

/// Crashes the observe of round `k + 1` at `point`, restarts, and checks
/// the recovered state against clean runs of `k` and `k + 1` rounds.
fn crash_and_recover(point: FaultPoint, seed: u64, k: usize) {
    let dir = tempfile::tempdir().unwrap();
    let job = job(seed);
    let (fault, armed) = hook(point);
    let before_crash;
    {
        let s = Service::open_with(dir.path(), Some(fault), 7).unwrap();
        let id = create(&s, reference_task("t", BUDGET, seed));
        drive(&s, &id, &job, k);
        before_crash = s.snapshot(&id).unwrap();
        let next = s.status(&id).unwrap().next_iteration;
        let sug = s.suggest(&id, &context_for(&job, next)).unwrap();
        armed.store(true, Ordering::SeqCst);
        let err = s.observe(&id, run(&job, &sug), None, None).unwrap_err();
        assert_eq!(err.class(), "crashed");
        // the crashed instance refuses further work on the task
        assert_eq!(s.suggest(&id, &context_for(&job, next)).unwrap_err().class(), "state");
    }

    let path = log_path(dir.path(), "t").unwrap();
    let on_disk = read_log(&path).unwrap();
    assert_eq!(on_disk.torn, point == FaultPoint::TornWrite);

    let restarted = Service::open(dir.path()).unwrap();
    let recovered = restarted.snapshot("t").unwrap();
    every_line_parses(&path);
    match point {
        FaultPoint::BeforePersist | FaultPoint::TornWrite => {
            assert_eq!(recovered, before_crash);
            assert_eq!(recovered, clean_run(seed, k));
        }
        FaultPoint::AfterPersist => {
            assert_eq!(recovered, clean_run(seed, k + 1));
            assert_eq!(recovered.history.len(), k + 1);
        }
    }
    if let Some(b) = &recovered.incumbent {
        assert_eq!(&restarted.best("t").unwrap(), b);
    }

    // finishing the task after recovery lands where an uninterrupted run does
    let done = k + usize::from(point == FaultPoint::AfterPersist);
    drive(&restarted, "t", &job, BUDGET as usize - done);
    assert_eq!(restarted.snapshot("t").unwrap(), clean_run(seed, BUDGET as usize));
}

#[test]
fn crash_before_persist_loses_the_unacknowledged_observation() {
    crash_and_recover(FaultPoint::BeforePersist, 3, 6);
}

#[test]
fn torn_write_is_discarded_on_restart() {
    crash_and_recover(FaultPoint::TornWrite, 3, 6);
}

#[test]
fn crash_after_persist_keeps_the_observation() {
    crash_and_recover(FaultPoint::AfterPersist, 3, 6);
}

#[test]
fn crash_on_the_first_observation() {
    for point in [FaultPoint::BeforePersist, FaultPoint::TornWrite, FaultPoint::AfterPersist] {
        crash_and_recover(point, 11, 0);
    }
}

#[test]
fn restart_reproduces_state_and_best() {
    let dir = tempfile::tempdir().unwrap();
    let (snapshot, best) = {
        let s = Service::open(dir.path()).unwrap();
        let id = create(&s, reference_task("t", 10, 5));
        drive(&s, &id, &job(5), 10);
        (s.snapshot(&id).unwrap(), s.best(&id).unwrap())
    };
    let s = Service::open(dir.path()).unwrap();
    assert_eq!(s.snapshot("t").unwrap(), snapshot);
    assert_eq!(s.best("t").unwrap(), best);
    assert_eq!(s.status("t").unwrap().status, otune_core::engine::TaskStatus::Stopped);
}

#[test]
fn log_is_append_only() {
    let dir = tempfile::tempdir().unwrap();
    let s = Service::open(dir.path()).unwrap();
    let id = create(&s, reference_task("t", 8, 2));
    let path = log_path(dir.path(), &id).unwrap();
    let mut previous = std::fs::read(&path).unwrap();
    let j = job(2);
    for _ in 0..6 {
        drive(&s, &id, &j, 1);
        let now = std::fs::read(&path).unwrap();
        assert!(now.len() > previous.len());
        assert_eq!(&now[..previous.len()], &previous[..]);
        previous = now;
    }
    let iterations: Vec<u64> = read_log(&path).unwrap().observations.iter().map(|o| o.iteration).collect();
    assert!(iterations.windows(2).all(|w| w[0] < w[1]), "{iterations:?}");
}

#[test]
fn corrupt_middle_line_is_reported() {
    let dir = tempfile::tempdir().unwrap();
    {
        let s = Service::open(dir.path()).unwrap();
        let id = create(&s, reference_task("t", 8, 2));
        drive(&s, &id, &job(2), 3);
    }
    let path = log_path(dir.path(), "t").unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[2] = "{\"record\":\"observation\",\"data\":{}}";
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    let err = Service::open(dir.path()).err().unwrap();
    assert_eq!(err.class(), "corrupt_log");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn recovery_matches_a_clean_run_at_any_point(
        k in 0usize..10,
        point in prop_oneof![
            Just(FaultPoint::BeforePersist),
            Just(FaultPoint::TornWrite),
            Just(FaultPoint::AfterPersist),
        ],
        seed in 1u64..50,
    ) {
        crash_and_recover(point, seed, k);
    }
}
