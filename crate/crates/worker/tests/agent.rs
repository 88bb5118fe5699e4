//! The agent against a live coordinator over TCP.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use xw_common::SystemClock;
use xw_coordinator::testkit::{self, ADMIN, ALICE, WORKER};
use xw_coordinator::{read_journal, CoordinatorConfig, JournalEvent, Server, Service, SharedService, SubmitRequest};
use xw_protocol::{
    decode_message, encode_message, AppKind, Body, Kind, PlatformRequirements, Retention, TaskStatus, TcpTransport,
    Transport, TransportError,
};
use xw_worker::{ActivationPolicy, Agent, AgentError, AgentStats, StateError, StopHandle, WorkerConfig};

const PERIOD: f64 = 0.1;

struct Deployment {
    dir: tempfile::TempDir,
    cfg: CoordinatorConfig,
    server: Option<Server>,
    addr: String,
}

impl Deployment {
    fn new(timeout_periods: f64, max_attempts: u32) -> Deployment {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = testkit::config(&dir.path().join("journal"));
        cfg.alive_period_s = PERIOD;
        cfg.alive_timeout_s = Some(PERIOD * timeout_periods);
        cfg.max_attempts = max_attempts;
        let mut d = Deployment {
            dir,
            cfg,
            server: None,
            addr: String::new(),
        };
        d.start("127.0.0.1:0");
        d
    }

    fn start(&mut self, bind: &str) {
        let c = testkit::open_with(self.cfg.clone(), Arc::new(SystemClock::new()));
        let server = Server::start(SharedService::new(Service::new(c)), bind).unwrap();
        self.addr = server.local_addr().to_string();
        self.server = Some(server);
    }

    fn restart_later(&mut self) {
        self.server.take().unwrap().shutdown();
    }

    fn service(&self) -> &SharedService {
        self.server.as_ref().unwrap().service()
    }

    fn register(&self, app_ref: &str, script: &str) {
        let mut s = self.service().lock();
        let c = s.coordinator_mut();
        let admin = testkit::token(c, ADMIN);
        c.register_app(&admin, app_ref, AppKind::NativeBinary, script.as_bytes().to_vec())
            .unwrap();
    }

    fn submit(&self, app_ref: &str, label: &str) -> String {
        let mut s = self.service().lock();
        let c = s.coordinator_mut();
        let alice = testkit::token(c, ALICE);
        let req = SubmitRequest {
            label: label.into(),
            app_ref: app_ref.into(),
            params: label.as_bytes().to_vec(),
            requirements: PlatformRequirements::any_native(),
            retention: Retention::KeepUntilSessionEnd,
        };
        c.submit_task(&alice, req).unwrap().0
    }

    fn status(&self, task: &str) -> (TaskStatus, u32) {
        let s = self.service().lock();
        let t = s.coordinator().state().task(task).unwrap();
        (t.status, t.attempt)
    }

    fn result(&self, task: &str) -> Option<Vec<u8>> {
        let s = self.service().lock();
        let r = s.coordinator().state().result(task)?;
        r.payload.as_ref().map(|b| b.as_slice().to_vec())
    }

    fn worker_config(&self, name: &str) -> WorkerConfig {
        let mut w = WorkerConfig::new(
            self.addr.clone(),
            testkit::identity().fingerprint(),
            WORKER,
            testkit::password(WORKER),
            self.dir.path().join(name),
        );
        w.alive_period_s = PERIOD;
        w.worker_id = Some(name.to_string());
        w.sandbox.max_cpu_seconds = 30.0;
        w
    }

    fn journal(&self) -> PathBuf {
        self.cfg.journal_path.clone()
    }
}

/// TCP transport that can be cut, counts requests, and can corrupt
/// downloaded applications.
#[derive(Clone)]
struct Link {
    inner: TcpTransport,
    down: Arc<AtomicBool>,
    corrupt_apps: bool,
    requests: Arc<AtomicUsize>,
    downloads: Arc<AtomicUsize>,
}

impl Link {
    fn new(addr: &str) -> Link {
        Link {
            inner: TcpTransport::new(addr),
            down: Arc::default(),
            corrupt_apps: false,
            requests: Arc::default(),
            downloads: Arc::default(),
        }
    }
}

impl Transport for Link {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        if self.down.load(Ordering::SeqCst) {
            return Err(TransportError::Unreachable("link cut".into()));
        }
        self.requests.fetch_add(1, Ordering::SeqCst);
        let kind = decode_message(request).map(|m| m.kind()).ok();
        if kind == Some(Kind::DownloadApp) {
            self.downloads.fetch_add(1, Ordering::SeqCst);
        }
        let reply = self.inner.exchange(request)?;
        if self.corrupt_apps && kind == Some(Kind::DownloadApp) {
            let mut m = decode_message(&reply).unwrap();
            if let Body::AppPayload { payload, .. } = &mut m.body {
                payload.0.push(b'#');
            }
            return Ok(encode_message(&m).unwrap());
        }
        Ok(reply)
    }
}

struct Running {
    stop: StopHandle,
    handle: JoinHandle<Result<AgentStats, AgentError>>,
}

impl Running {
    fn finish(self) -> AgentStats {
        self.stop.stop();
        self.handle.join().unwrap().unwrap()
    }
}

fn spawn<T: Transport + Send + 'static>(cfg: WorkerConfig, transport: T) -> Running {
    let mut agent = Agent::new(cfg, transport).unwrap();
    let stop = agent.stop_handle();
    let handle = std::thread::spawn(move || agent.run());
    Running { stop, handle }
}

fn wait_until(limit: Duration, mut f: impl FnMut() -> bool) {
    let t = Instant::now();
    while !f() {
        assert!(t.elapsed() < limit, "condition not reached within {limit:?}");
        std::thread::sleep(Duration::from_millis(10));
    }
}

/// Pids of processes whose command line contains `marker`.
fn processes_with(marker: &str) -> Vec<u32> {
    let mut pids = Vec::new();
    for e in std::fs::read_dir("/proc").unwrap().flatten() {
        let Some(pid) = e.file_name().to_str().and_then(|s| s.parse::<u32>().ok()) else {
            continue;
        };
        if let Ok(cmd) = std::fs::read(format!("/proc/{pid}/cmdline")) {
            if String::from_utf8_lossy(&cmd).replace('\0', " ").contains(marker) {
                pids.push(pid);
            }
        }
    }
    pids
}

fn alive(pid: u32) -> bool {
    std::fs::read_to_string(format!("/proc/{pid}/stat"))
        .map(|s| !s.contains(") Z "))
        .unwrap_or(false)
}

fn scheduled_and_stored(journal: &Path) -> Vec<(String, String, String)> {
    read_journal(journal)
        .unwrap()
        .entries
        .into_iter()
        .filter_map(|e| match e.event {
            JournalEvent::TaskScheduled { task_id, worker_id, .. } => Some(("sched".into(), task_id, worker_id)),
            JournalEvent::ResultStored { task_id, worker_id, .. } => Some(("done".into(), task_id, worker_id)),
            _ => None,
        })
        .collect()
}

#[test]
fn one_worker_runs_three_tasks_in_fifo_order() {
    let d = Deployment::new(3.0, 5);
    let tasks: Vec<String> = ["a", "b", "c"].iter().map(|l| d.submit(testkit::APP, l)).collect();
    let run = spawn(d.worker_config("w1"), Link::new(&d.addr));
    wait_until(Duration::from_secs(20), || {
        tasks.iter().all(|t| d.status(t).0 == TaskStatus::Completed)
    });
    let stats = run.finish();
    assert_eq!(stats.results_accepted, 3);
    let mut expected = Vec::new();
    for t in &tasks {
        expected.push(("sched".to_string(), t.clone(), "w1".to_string()));
        expected.push(("done".to_string(), t.clone(), "w1".to_string()));
    }
    assert_eq!(scheduled_and_stored(&d.journal()), expected);
    for (t, l) in tasks.iter().zip(["a", "b", "c"]) {
        assert_eq!(d.result(t).unwrap(), l.as_bytes());
    }
}

#[test]
fn stop_directive_kills_the_child_within_one_period() {
    let d = Deployment::new(3.0, 5);
    d.register("long", "#!/bin/sh\nexec sleep 301.25\n");
    let t = d.submit("long", "x");
    let run = spawn(d.worker_config("w1"), Link::new(&d.addr));
    let mut pid = 0;
    wait_until(Duration::from_secs(10), || {
        pid = processes_with("sleep 301.25").first().copied().unwrap_or(0);
        pid != 0
    });
    // Reschedule as if the worker had gone silent.
    {
        let mut s = d.service().lock();
        let later = s.coordinator().now() + Duration::from_secs(3600);
        assert_eq!(s.sweep(later).unwrap().rescheduled, vec![t.clone()]);
    }
    let stopped_at = Instant::now();
    wait_until(Duration::from_secs(5), || !alive(pid));
    let took = stopped_at.elapsed();
    assert!(
        took <= Duration::from_secs_f64(PERIOD) + Duration::from_millis(150),
        "{took:?}"
    );
    let stats = run.finish();
    assert!(stats.stops_obeyed >= 1);
    assert_eq!(stats.results_accepted, 0);
    assert!(d.result(&t).is_none());
    // Agent shutdown leaves no sandbox child either.
    wait_until(Duration::from_secs(2), || {
        processes_with("sleep 301.25").iter().all(|&p| !alive(p))
    });
}

#[test]
fn cpu_limit_failure_is_reported_and_the_next_task_runs() {
    let d = Deployment::new(3.0, 2);
    d.register("spin", "#!/bin/sh\nwhile :; do :; done\n");
    let spin = d.submit("spin", "spin");
    let echo = d.submit(testkit::APP, "after");
    let mut cfg = d.worker_config("w1");
    cfg.sandbox.max_cpu_seconds = 0.5;
    let run = spawn(cfg, Link::new(&d.addr));
    wait_until(Duration::from_secs(20), || d.status(&echo).0 == TaskStatus::Completed);
    let stats = run.finish();
    assert_eq!(d.status(&spin), (TaskStatus::Aborted, 2));
    assert_eq!(stats.failures_reported, 2);
    assert_eq!(d.result(&echo).unwrap(), b"after");
}

#[test]
fn coordinator_restart_during_compute_is_absorbed() {
    let mut d = Deployment::new(3.0, 5);
    d.register("slow", "#!/bin/sh\nsleep 1.5\ncp \"$1\" out.txt\n");
    let t = d.submit("slow", "slow");
    let addr = d.addr.clone();
    let run = spawn(d.worker_config("w1"), Link::new(&addr));
    wait_until(Duration::from_secs(10), || d.status(&t).0 == TaskStatus::Scheduled);
    std::thread::sleep(Duration::from_millis(100));
    d.restart_later();
    // Down for five alive periods.
    std::thread::sleep(Duration::from_secs_f64(5.0 * PERIOD));
    d.start(&addr);
    wait_until(Duration::from_secs(20), || d.status(&t).0 == TaskStatus::Completed);
    let stats = run.finish();
    assert_eq!(stats.results_accepted, 1);
    assert!(stats.offline_episodes >= 1);
    assert_eq!(d.status(&t), (TaskStatus::Completed, 1));
    assert_eq!(d.result(&t).unwrap(), b"slow");
}

#[test]
fn long_outage_loses_the_task_and_the_stale_work_is_discarded() {
    let d = Deployment::new(3.0, 5);
    d.register("slow", "#!/bin/sh\nsleep 1.2\ncp \"$1\" out.txt\n");
    let t = d.submit("slow", "slow");
    let link = Link::new(&d.addr);
    let cut = link.down.clone();
    let run = spawn(d.worker_config("w1"), link);
    wait_until(Duration::from_secs(10), || d.status(&t).0 == TaskStatus::Scheduled);
    cut.store(true, Ordering::SeqCst);
    wait_until(Duration::from_secs(5), || d.status(&t).0 == TaskStatus::Pending);
    cut.store(false, Ordering::SeqCst);
    wait_until(Duration::from_secs(20), || d.status(&t).0 == TaskStatus::Completed);
    let stats = run.finish();
    assert!(stats.stops_obeyed + stats.results_rejected >= 1, "{stats:?}");
    assert_eq!(stats.results_accepted, 1);
    assert_eq!(d.status(&t), (TaskStatus::Completed, 2));
}

#[test]
fn restart_within_timeout_recomputes_the_same_task() {
    let d = Deployment::new(30.0, 5);
    d.register("slow", "#!/bin/sh\nsleep 0.8\ncp \"$1\" out.txt\n");
    let t = d.submit("slow", "slow");
    let first = spawn(d.worker_config("w1"), Link::new(&d.addr));
    wait_until(Duration::from_secs(10), || d.status(&t).0 == TaskStatus::Scheduled);
    std::thread::sleep(Duration::from_millis(300));
    let s1 = first.finish();
    assert_eq!(s1.results_accepted, 0);
    let second = spawn(d.worker_config("w1"), Link::new(&d.addr));
    wait_until(Duration::from_secs(10), || d.status(&t).0 == TaskStatus::Completed);
    let s2 = second.finish();
    assert_eq!((s2.tasks_started, s2.results_accepted), (1, 1));
    assert_eq!(d.status(&t), (TaskStatus::Completed, 1));
    let scheds = scheduled_and_stored(&d.journal())
        .iter()
        .filter(|e| e.0 == "sched")
        .count();
    assert_eq!(scheds, 1);
}

#[test]
fn restart_after_timeout_is_told_to_stop() {
    let d = Deployment::new(3.0, 5);
    d.register("slow", "#!/bin/sh\nsleep 0.8\ncp \"$1\" out.txt\n");
    let t = d.submit("slow", "slow");
    let first = spawn(d.worker_config("w1"), Link::new(&d.addr));
    wait_until(Duration::from_secs(10), || d.status(&t).0 == TaskStatus::Scheduled);
    first.finish();
    wait_until(Duration::from_secs(5), || d.status(&t).0 == TaskStatus::Pending);
    let second = spawn(d.worker_config("w1"), Link::new(&d.addr));
    wait_until(Duration::from_secs(10), || d.status(&t).0 == TaskStatus::Completed);
    let s2 = second.finish();
    assert_eq!(s2.stops_obeyed, 1);
    assert_eq!(s2.results_accepted, 1);
    assert_eq!(d.status(&t), (TaskStatus::Completed, 2));
}

#[test]
fn outside_availability_windows_nothing_is_requested() {
    let d = Deployment::new(3.0, 5);
    let t = d.submit(testkit::APP, "x");
    let mut cfg = d.worker_config("w1");
    cfg.policy = ActivationPolicy {
        availability_windows: vec![],
        ..ActivationPolicy::always()
    };
    let link = Link::new(&d.addr);
    let requests = link.requests.clone();
    let run = spawn(cfg, link);
    std::thread::sleep(Duration::from_secs_f64(10.0 * PERIOD));
    let stats = run.finish();
    assert_eq!(stats.request_work_calls, 0);
    assert_eq!(requests.load(Ordering::SeqCst), 0);
    assert_eq!(d.status(&t).0, TaskStatus::Pending);
}

#[test]
fn corrupted_application_is_fetched_twice_then_reported() {
    let d = Deployment::new(3.0, 1);
    let t = d.submit(testkit::APP, "x");
    let mut link = Link::new(&d.addr);
    link.corrupt_apps = true;
    let downloads = link.downloads.clone();
    let run = spawn(d.worker_config("w1"), link);
    wait_until(Duration::from_secs(10), || d.status(&t).0 == TaskStatus::Aborted);
    let stats = run.finish();
    assert_eq!(downloads.load(Ordering::SeqCst), 2);
    assert_eq!(stats.failures_reported, 1);
    assert_eq!(stats.tasks_started, 0);
}

#[test]
fn one_agent_per_state_directory() {
    let d = Deployment::new(3.0, 5);
    let _first = Agent::new(d.worker_config("w1"), Link::new(&d.addr)).unwrap();
    let second = Agent::new(d.worker_config("w1"), Link::new(&d.addr));
    assert!(matches!(second, Err(AgentError::State(StateError::AlreadyRunning(_)))));
}

#[test]
fn killed_binary_resumes_the_task_after_restart() {
    let d = Deployment::new(30.0, 5);
    d.register("slow", "#!/bin/sh\nsleep 1\ncp \"$1\" out.txt\n");
    let t = d.submit("slow", "slow");
    let cfg = d.worker_config("bin");
    let cfg_path = d.dir.path().join("worker.json");
    std::fs::write(&cfg_path, serde_json::to_vec(&cfg).unwrap()).unwrap();
    let spawn_bin = || {
        std::process::Command::new(env!("CARGO_BIN_EXE_worker"))
            .arg("--config")
            .arg(&cfg_path)
            .stderr(std::process::Stdio::null())
            .spawn()
            .unwrap()
    };
    let mut child = spawn_bin();
    wait_until(Duration::from_secs(10), || d.status(&t).0 == TaskStatus::Scheduled);
    std::thread::sleep(Duration::from_millis(300));
    child.kill().unwrap();
    child.wait().unwrap();
    let mut again = spawn_bin();
    wait_until(Duration::from_secs(20), || d.status(&t).0 == TaskStatus::Completed);
    again.kill().unwrap();
    again.wait().unwrap();
    assert_eq!(d.status(&t), (TaskStatus::Completed, 1));
    assert_eq!(d.result(&t).unwrap(), b"slow");
}
