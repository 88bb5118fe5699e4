use std::sync::Arc;
use std::time::Duration;

use xw_common::{Clock, ManualClock};
use xw_coordinator::testkit::{self, ADMIN, ALICE, APP, BOB, WORKER};
use xw_coordinator::{Coordinator, CoordinatorError, SubmitRequest, UploadOutcome};
use xw_protocol::{
    AppKind, Directive, PlatformRequirements, RejectReason, Retention, Role, TaskStatus, WorkerCapabilities,
};

struct Env {
    _dir: tempfile::TempDir,
    clock: Arc<ManualClock>,
    c: Coordinator,
    alice: String,
    worker: String,
}

fn env() -> Env {
    let dir = tempfile::tempdir().unwrap();
    let clock = testkit::manual_clock();
    let c = testkit::open(&dir.path().join("journal"), clock.clone() as Arc<dyn Clock>);
    let alice = testkit::token(&c, ALICE);
    let worker = testkit::token(&c, WORKER);
    Env {
        _dir: dir,
        clock,
        c,
        alice,
        worker,
    }
}

fn req(label: &str) -> SubmitRequest {
    SubmitRequest {
        label: label.into(),
        app_ref: APP.into(),
        params: label.as_bytes().to_vec(),
        requirements: PlatformRequirements::any_native(),
        retention: Retention::DiscardOnFetch,
    }
}

fn caps() -> WorkerCapabilities {
    WorkerCapabilities::new("x86_64", "linux", false)
}

impl Env {
    fn submit(&mut self, label: &str) -> String {
        self.c.submit_task(&self.alice.clone(), req(label)).unwrap().0
    }

    fn pull(&mut self, worker_id: &str, txid: &str) -> Option<String> {
        let tok = self.worker.clone();
        self.c
            .request_work(&tok, worker_id, &caps(), txid)
            .unwrap()
            .map(|a| a.task_id)
    }

    fn upload(&mut self, worker_id: &str, task: &str, payload: &[u8], txid: &str) -> UploadOutcome {
        let tok = self.worker.clone();
        self.c
            .upload_result(&tok, worker_id, task, payload.to_vec(), txid)
            .unwrap()
    }
}

#[test]
fn first_submit_is_pending_and_resubmit_is_deduplicated() {
    let mut e = env();
    let (id, created) = e.c.submit_task(&e.alice.clone(), req("shower-0001")).unwrap();
    assert!(created);
    assert_eq!(e.c.state().task(&id).unwrap().status, TaskStatus::Pending);
    let (again, created) = e.c.submit_task(&e.alice.clone(), req("shower-0001")).unwrap();
    assert_eq!((again, created), (id, false));
    assert_eq!(e.c.state().task_count(), 1);
}

#[test]
fn same_label_for_different_owners_is_distinct() {
    let mut e = env();
    let bob = testkit::token(&e.c, BOB);
    let a = e.submit("x");
    let (b, created) = e.c.submit_task(&bob, req("x")).unwrap();
    assert!(created);
    assert_ne!(a, b);
}

#[test]
fn submit_rejections() {
    let mut e = env();
    let mut r = req("a");
    r.app_ref = "nope".into();
    assert!(matches!(
        e.c.submit_task(&e.alice.clone(), r),
        Err(CoordinatorError::UnknownApp(_))
    ));
    let worker = e.worker.clone();
    assert!(matches!(
        e.c.submit_task(&worker, req("a")),
        Err(CoordinatorError::AuthDenied(_))
    ));
    assert!(matches!(
        e.c.submit_task("garbage", req("a")),
        Err(CoordinatorError::AuthDenied(_))
    ));
    let mut r = req("a");
    r.requirements = PlatformRequirements::managed();
    assert!(matches!(
        e.c.submit_task(&e.alice.clone(), r),
        Err(CoordinatorError::BadRequest(_))
    ));
    assert_eq!(e.c.state().task_count(), 0);
}

#[test]
fn queue_limit_is_enforced() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = testkit::config(&dir.path().join("j"));
    cfg.queue_limit = 2;
    let (mut c, _) = Coordinator::recover(cfg, testkit::manual_clock()).unwrap();
    let admin = testkit::token(&c, ADMIN);
    c.register_app(&admin, APP, AppKind::NativeBinary, vec![1]).unwrap();
    let alice = testkit::token(&c, ALICE);
    c.submit_task(&alice, req("a")).unwrap();
    c.submit_task(&alice, req("b")).unwrap();
    assert!(matches!(
        c.submit_task(&alice, req("c")),
        Err(CoordinatorError::QueueFull(2))
    ));
    // A duplicate is still answered.
    assert!(!c.submit_task(&alice, req("a")).unwrap().1);
}

#[test]
fn list_owned_tasks_in_submission_order() {
    let mut e = env();
    assert!(e.c.list_owned_tasks(&e.alice).unwrap().is_empty());
    for l in ["c", "a", "b"] {
        e.submit(l);
    }
    let bob = testkit::token(&e.c, BOB);
    e.c.submit_task(&bob, req("z")).unwrap();
    let labels: Vec<_> =
        e.c.list_owned_tasks(&e.alice)
            .unwrap()
            .into_iter()
            .map(|t| t.label)
            .collect();
    assert_eq!(labels, ["c", "a", "b"]);
    let t = e.pull("w1", "r1").unwrap();
    e.upload("w1", &t, b"out", "u1");
    let listed = e.c.list_owned_tasks(&e.alice).unwrap();
    assert_eq!(listed[0].status, TaskStatus::Completed);
    assert_eq!(listed[1].status, TaskStatus::Pending);
}

#[test]
fn fifo_and_capability_matching() {
    let mut e = env();
    let admin = testkit::token(&e.c, ADMIN);
    e.c.register_app(&admin, "jar", AppKind::ManagedArchive, vec![0xca, 0xfe])
        .unwrap();
    let mut managed = req("m");
    managed.app_ref = "jar".into();
    managed.requirements = PlatformRequirements::managed();
    let t1 = e.c.submit_task(&e.alice.clone(), managed).unwrap().0;
    let t2 = e.submit("n1");
    let t3 = e.submit("n2");
    assert_eq!(e.pull("w1", "r1").as_ref(), Some(&t2));
    assert_eq!(e.c.state().task(&t1).unwrap().status, TaskStatus::Pending);
    assert_eq!(e.pull("w2", "r2").as_ref(), Some(&t3));
    assert_eq!(e.pull("w3", "r3"), None);
    let tok = e.worker.clone();
    let a =
        e.c.request_work(&tok, "w4", &WorkerCapabilities::new("arm", "linux", true), "r4")
            .unwrap()
            .unwrap();
    assert_eq!(a.task_id, t1);
    assert_eq!(a.app_kind, AppKind::ManagedArchive);
}

#[test]
fn empty_queue_gives_no_work() {
    let mut e = env();
    assert_eq!(e.pull("w1", "r1"), None);
}

#[test]
fn busy_worker_and_replayed_request() {
    let mut e = env();
    let t1 = e.submit("a");
    e.submit("b");
    assert_eq!(e.pull("w1", "r1").as_ref(), Some(&t1));
    // Lost reply: same transaction id yields the same assignment.
    assert_eq!(e.pull("w1", "r1").as_ref(), Some(&t1));
    let tok = e.worker.clone();
    match e.c.request_work(&tok, "w1", &caps(), "r2") {
        Err(CoordinatorError::WorkerBusy { task_id }) => assert_eq!(task_id, t1),
        other => panic!("expected WorkerBusy, got {other:?}"),
    }
    let client = e.alice.clone();
    assert!(matches!(
        e.c.request_work(&client, "w1", &caps(), "r3"),
        Err(CoordinatorError::AuthDenied(_))
    ));
}

#[test]
fn alive_directives() {
    let mut e = env();
    let t = e.submit("a");
    e.pull("w1", "r1");
    let tok = e.worker.clone();
    assert_eq!(e.c.report_alive(&tok, "w1", &t).unwrap(), Directive::Continue);
    assert_eq!(e.c.report_alive(&tok, "w2", &t).unwrap(), Directive::Stop);
    assert_eq!(e.c.report_alive(&tok, "w1", "task-999").unwrap(), Directive::Stop);
    e.upload("w1", &t, b"r", "u1");
    assert_eq!(e.c.report_alive(&tok, "w1", &t).unwrap(), Directive::Stop);
}

#[test]
fn sweep_reschedules_silent_worker_and_stops_it() {
    let mut e = env();
    let t0 = e.submit("t0");
    let t1 = e.submit("t1");
    assert_eq!(e.pull("w-dead", "r1").as_ref(), Some(&t0));
    assert_eq!(e.pull("w-live", "r2").as_ref(), Some(&t1));
    let period = e.c.config().alive_period();
    assert!(e.c.sweep_liveness(e.clock.now()).unwrap().rescheduled.is_empty());
    let tok = e.worker.clone();
    for _ in 0..3 {
        e.clock.advance(period);
        e.c.report_alive(&tok, "w-live", &t1).unwrap();
    }
    // Exactly at the timeout the worker is still connected.
    assert!(e.c.sweep_liveness(e.clock.now()).unwrap().rescheduled.is_empty());
    e.clock.advance(Duration::from_millis(1));
    let r = e.c.sweep_liveness(e.clock.now()).unwrap();
    assert_eq!(r.rescheduled, vec![t0.clone()]);
    assert_eq!(r.disconnected, vec!["w-dead".to_string()]);
    let task = e.c.state().task(&t0).unwrap();
    assert_eq!((task.status, task.attempt), (TaskStatus::Pending, 2));
    assert_eq!(task.sequence_no, 0);
    assert_eq!(e.c.report_alive(&tok, "w-dead", &t0).unwrap(), Directive::Stop);
    // Replacement picks it up, uploads; the stale worker is rejected.
    assert_eq!(e.pull("w-new", "r3").as_ref(), Some(&t0));
    assert_eq!(
        e.upload("w-dead", &t0, b"stale", "u0"),
        UploadOutcome::Rejected(RejectReason::NotAssignee)
    );
    assert_eq!(e.upload("w-new", &t0, b"fresh", "u1"), UploadOutcome::Accepted);
    assert_eq!(
        e.upload("w-dead", &t0, b"stale", "u0"),
        UploadOutcome::Rejected(RejectReason::AlreadyCompleted)
    );
    assert_eq!(
        e.c.state().result(&t0).unwrap().payload.as_ref().unwrap().as_slice(),
        b"fresh"
    );
}

#[test]
fn rescheduled_task_keeps_its_fifo_slot() {
    let mut e = env();
    let t0 = e.submit("t0");
    e.pull("w1", "r1");
    e.submit("t1");
    e.clock.advance(e.c.config().alive_timeout() + Duration::from_millis(1));
    e.c.sweep_liveness(e.clock.now()).unwrap();
    assert_eq!(e.pull("w2", "r2").as_ref(), Some(&t0));
}

#[test]
fn attempts_are_bounded() {
    let mut e = env();
    let t = e.submit("poison");
    let max = e.c.config().max_attempts;
    let timeout = e.c.config().alive_timeout();
    for attempt in 1..=max {
        let got = e.pull(&format!("w{attempt}"), &format!("r{attempt}"));
        assert_eq!(got.as_ref(), Some(&t));
        assert_eq!(e.c.state().task(&t).unwrap().attempt, attempt);
        e.clock.advance(timeout + Duration::from_millis(1));
        let r = e.c.sweep_liveness(e.clock.now()).unwrap();
        if attempt < max {
            assert_eq!(r.rescheduled, vec![t.clone()]);
        } else {
            assert_eq!(r.aborted, vec![t.clone()]);
        }
    }
    assert_eq!(e.c.state().task(&t).unwrap().status, TaskStatus::Aborted);
    assert_eq!(e.pull("w9", "r9"), None);
    let alice = e.alice.clone();
    assert!(matches!(
        e.c.fetch_result(&alice, &t),
        Err(CoordinatorError::Aborted(_))
    ));
    assert_eq!(
        e.upload("w5", &t, b"late", "u"),
        UploadOutcome::Rejected(RejectReason::TaskAborted)
    );
}

#[test]
fn reported_failure_requeues() {
    let mut e = env();
    let t = e.submit("a");
    e.pull("w1", "r1");
    let tok = e.worker.clone();
    assert_eq!(
        e.c.report_failure(&tok, "w1", &t, "exit 1").unwrap(),
        TaskStatus::Pending
    );
    assert_eq!(e.c.state().task(&t).unwrap().attempt, 2);
    // A second report from a non-assignee changes nothing.
    assert_eq!(
        e.c.report_failure(&tok, "w1", &t, "exit 1").unwrap(),
        TaskStatus::Pending
    );
    assert_eq!(e.c.state().task(&t).unwrap().attempt, 2);
}

#[test]
fn upload_replay_and_unknown_task() {
    let mut e = env();
    let t = e.submit("a");
    e.pull("w1", "r1");
    assert_eq!(e.upload("w1", &t, b"x", "u1"), UploadOutcome::Accepted);
    assert_eq!(e.upload("w1", &t, b"x", "u1"), UploadOutcome::Accepted);
    assert_eq!(
        e.upload("w1", &t, b"y", "u2"),
        UploadOutcome::Rejected(RejectReason::AlreadyCompleted)
    );
    assert_eq!(
        e.upload("w1", "task-77", b"y", "u3"),
        UploadOutcome::Rejected(RejectReason::UnknownTask)
    );
    let tok = e.worker.clone();
    let big = vec![0u8; e.c.config().max_payload_bytes + 1];
    assert!(matches!(
        e.c.upload_result(&tok, "w1", &t, big, "u4"),
        Err(CoordinatorError::PayloadTooLarge { .. })
    ));
}

#[test]
fn fetch_discard_on_fetch() {
    let mut e = env();
    let t = e.submit("a");
    let alice = e.alice.clone();
    assert!(matches!(
        e.c.fetch_result(&alice, &t),
        Err(CoordinatorError::NotReady(_))
    ));
    e.pull("w1", "r1");
    assert!(matches!(
        e.c.fetch_result(&alice, &t),
        Err(CoordinatorError::NotReady(_))
    ));
    e.upload("w1", &t, b"payload", "u1");
    let bob = testkit::token(&e.c, BOB);
    assert!(matches!(e.c.fetch_result(&bob, &t), Err(CoordinatorError::NotOwner(_))));
    assert_eq!(e.c.fetch_result(&alice, &t).unwrap(), b"payload");
    assert!(matches!(e.c.fetch_result(&alice, &t), Err(CoordinatorError::Gone(_))));
    assert!(e.c.state().result(&t).unwrap().payload.is_none());
}

#[test]
fn keep_until_session_end_across_two_owners() {
    let mut e = env();
    let bob = testkit::token(&e.c, BOB);
    let alice = e.alice.clone();
    let mut kept = Vec::new();
    for (tok, label) in [(&alice, "a1"), (&alice, "a2"), (&bob, "b1")] {
        let mut r = req(label);
        r.retention = Retention::KeepUntilSessionEnd;
        kept.push(e.c.submit_task(tok, r).unwrap().0);
    }
    for (i, t) in kept.iter().enumerate() {
        let w = format!("w{i}");
        assert_eq!(e.pull(&w, &format!("r{i}")).as_ref(), Some(t));
        e.upload(&w, t, t.as_bytes(), &format!("u{i}"));
    }
    assert_eq!(e.c.fetch_result(&alice, &kept[0]).unwrap(), kept[0].as_bytes());
    assert_eq!(e.c.fetch_result(&alice, &kept[0]).unwrap(), kept[0].as_bytes());
    assert_eq!(e.c.end_session(&alice).unwrap(), 2);
    assert!(matches!(
        e.c.fetch_result(&alice, &kept[1]),
        Err(CoordinatorError::Gone(_))
    ));
    assert_eq!(e.c.fetch_result(&bob, &kept[2]).unwrap(), kept[2].as_bytes());
    assert_eq!(e.c.end_session(&alice).unwrap(), 0);
}

#[test]
fn administration() {
    let mut e = env();
    let admin = testkit::token(&e.c, ADMIN);
    let alice = e.alice.clone();
    let bytes = vec![1, 2, 3, 4];
    assert!(matches!(
        e.c.register_app(&alice, "x", AppKind::NativeBinary, bytes.clone()),
        Err(CoordinatorError::AuthDenied(_))
    ));
    e.c.register_app(&admin, "x", AppKind::NativeBinary, bytes.clone())
        .unwrap();
    assert!(matches!(
        e.c.register_app(&admin, "x", AppKind::NativeBinary, bytes.clone()),
        Err(CoordinatorError::DuplicateApp(_))
    ));
    let app = e.c.download_app(&e.worker, "x").unwrap();
    assert_eq!(app.payload.as_slice(), &bytes[..]);
    assert_eq!(app.digest, xw_common::digest(&bytes));

    let pw = xw_protocol::password_digest("carol", "pw");
    e.c.add_user(&admin, "carol", pw, Role::Client).unwrap();
    let carol = e.c.login("carol", "pw", Role::Client).unwrap().token;
    e.c.revoke_user(&admin, BOB).unwrap();
    assert!(matches!(
        e.c.login(BOB, &testkit::password(BOB), Role::Client),
        Err(CoordinatorError::AuthDenied(_))
    ));
    e.c.revoke_user(&admin, "carol").unwrap();
    // Tokens issued before revocation stop working too.
    assert!(matches!(
        e.c.list_owned_tasks(&carol),
        Err(CoordinatorError::AuthDenied(_))
    ));
}

#[test]
fn login_checks_password_and_role() {
    let e = env();
    assert!(e.c.login(ALICE, "wrong", Role::Client).is_err());
    assert!(e.c.login(ALICE, &testkit::password(ALICE), Role::Worker).is_err());
    assert!(e.c.login("nobody", "x", Role::Client).is_err());
    let t = e.c.login(ALICE, &testkit::password(ALICE), Role::Client).unwrap();
    assert_eq!(t.principal, ALICE);
}

#[test]
fn tokens_expire() {
    let e = env();
    e.clock.advance(e.c.config().token_lifetime() + Duration::from_secs(1));
    assert!(matches!(
        e.c.list_owned_tasks(&e.alice),
        Err(CoordinatorError::AuthDenied(_))
    ));
}
