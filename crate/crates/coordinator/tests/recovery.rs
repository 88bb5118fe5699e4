use std::fs::OpenOptions;
use std::io::{Seek, SeekFrom, Write};
use std::process::Command;
use std::sync::Arc;
use std::time::Duration;

use xw_common::Clock;
use xw_coordinator::testkit::{self, ALICE, APP, WORKER};
use xw_coordinator::{read_journal, Coordinator, CoordinatorError, CoordinatorState, SubmitRequest};
use xw_protocol::{PlatformRequirements, Retention, TaskStatus, WorkerCapabilities};

fn req(label: String) -> SubmitRequest {
    SubmitRequest {
        label,
        app_ref: APP.into(),
        params: vec![1, 2, 3],
        requirements: PlatformRequirements::any_native(),
        retention: Retention::KeepUntilSessionEnd,
    }
}

/// 100 submits, 50 assignments, 40 results.
fn populate(c: &mut Coordinator) {
    let alice = testkit::token(c, ALICE);
    let worker = testkit::token(c, WORKER);
    for i in 0..100 {
        c.submit_task(&alice, req(format!("job-{i:03}"))).unwrap();
    }
    let caps = WorkerCapabilities::new("x86_64", "linux", false);
    for i in 0..50 {
        let w = format!("w{i}");
        let a = c.request_work(&worker, &w, &caps, &format!("r{i}")).unwrap().unwrap();
        if i < 40 {
            c.upload_result(&worker, &w, &a.task_id, vec![i as u8], &format!("u{i}"))
                .unwrap();
        }
    }
}

#[test]
fn empty_journal_gives_empty_state() {
    let dir = tempfile::tempdir().unwrap();
    let (c, report) = Coordinator::recover(testkit::config(&dir.path().join("j")), testkit::manual_clock()).unwrap();
    assert_eq!(c.state().task_count(), 0);
    assert_eq!(report.entries_replayed, 0);
}

#[test]
fn crash_and_recover_reproduces_state_hash() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal");
    let clock = testkit::manual_clock();
    let mut c = testkit::open(&path, clock.clone() as Arc<dyn Clock>);
    populate(&mut c);
    let before = c.state_hash();
    let snapshot = c.state().clone();
    drop(c);

    let (c, report) = Coordinator::recover(testkit::config(&path), clock.clone()).unwrap();
    assert_eq!(report.torn_bytes, 0);
    assert_eq!(c.state_hash(), before);
    assert_eq!(c.state(), &snapshot);
    assert_eq!(c.state().count_status(TaskStatus::Completed), 40);
    assert_eq!(c.state().count_status(TaskStatus::Scheduled), 10);
    assert_eq!(c.state().count_status(TaskStatus::Pending), 50);
    // Recovered assignees get one full timeout before being swept.
    assert_eq!(c.workers().len(), 10);
}

#[test]
fn recovered_scheduled_tasks_wait_for_a_full_timeout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal");
    let clock = testkit::manual_clock();
    let mut c = testkit::open(&path, clock.clone() as Arc<dyn Clock>);
    populate(&mut c);
    drop(c);
    clock.advance(Duration::from_secs(3600));
    let (mut c, _) = Coordinator::recover(testkit::config(&path), clock.clone()).unwrap();
    let timeout = c.config().alive_timeout();
    assert!(c.sweep_liveness(clock.now()).unwrap().rescheduled.is_empty());
    // One worker re-signals, the rest stay silent.
    let worker = testkit::token(&c, WORKER);
    let held = c.state().scheduled_to("w45").next().unwrap().task_id.clone();
    clock.advance(timeout / 2);
    c.report_alive(&worker, "w45", &held).unwrap();
    clock.advance(timeout / 2 + Duration::from_millis(1));
    let r = c.sweep_liveness(clock.now()).unwrap();
    assert_eq!(r.rescheduled.len(), 9);
    assert!(!r.rescheduled.contains(&held));
}

#[test]
fn torn_tail_is_dropped() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal");
    let clock = testkit::manual_clock();
    let mut c = testkit::open(&path, clock.clone() as Arc<dyn Clock>);
    populate(&mut c);
    drop(c);
    let full = read_journal(&path).unwrap();
    let len = std::fs::metadata(&path).unwrap().len();
    OpenOptions::new()
        .write(true)
        .open(&path)
        .unwrap()
        .set_len(len - 7)
        .unwrap();

    let mut expected = CoordinatorState::new();
    for e in &full.entries[..full.entries.len() - 1] {
        expected.apply(&e.event).unwrap();
    }
    let (mut c, report) = Coordinator::recover(testkit::config(&path), clock.clone()).unwrap();
    assert!(report.torn_bytes > 0);
    assert_eq!(c.state_hash(), expected.state_hash());
    // The journal stays appendable after the truncation.
    let alice = testkit::token(&c, ALICE);
    c.submit_task(&alice, req("after".into())).unwrap();
    let hash = c.state_hash();
    drop(c);
    let (c, report) = Coordinator::recover(testkit::config(&path), clock).unwrap();
    assert_eq!((c.state_hash(), report.torn_bytes), (hash, 0));
}

#[test]
fn damage_before_the_tail_is_fatal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal");
    let mut c = testkit::open(&path, testkit::manual_clock());
    populate(&mut c);
    drop(c);
    let mut f = OpenOptions::new().write(true).open(&path).unwrap();
    f.seek(SeekFrom::Start(200)).unwrap();
    f.write_all(b"#").unwrap();
    drop(f);
    let err = Coordinator::recover(testkit::config(&path), testkit::manual_clock()).unwrap_err();
    assert!(err.is_corrupt_journal(), "{err}");
    assert!(matches!(err, CoordinatorError::Journal(_)));
}

#[test]
fn binary_exits_2_on_corrupt_journal() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("journal");
    let mut c = testkit::open(&path, testkit::manual_clock());
    populate(&mut c);
    let mut cfg = c.config().clone();
    drop(c);
    let mut f = OpenOptions::new().write(true).open(&path).unwrap();
    f.seek(SeekFrom::Start(100)).unwrap();
    f.write_all(b"\x00\x00").unwrap();
    drop(f);
    cfg.bind_address = "127.0.0.1".into();
    cfg.port = 0;
    let cfg_path = dir.path().join("coordinator.json");
    std::fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let status = Command::new(env!("CARGO_BIN_EXE_coordinator"))
        .arg("--config")
        .arg(&cfg_path)
        .status()
        .unwrap();
    assert_eq!(status.code(), Some(2));
}
