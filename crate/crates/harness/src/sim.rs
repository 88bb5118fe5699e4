//! Discrete-event execution of a scenario.
//!
//! The coordinator is the real one, with its journal on disk and every
//! exchange encoded and decoded on the wire format; only time is virtual.
//! Virtual workers follow the same protocol as the worker agent (pull,
//! alive signals, stop directives, offline continuation with backoff,
//! resumption of a held task after a restart) but "compute" by letting
//! virtual time pass. Events at equal times run in creation order, so a
//! scenario and seed always produce the same trace.

use std::cell::RefCell;
use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet, BinaryHeap, HashSet};
use std::path::PathBuf;
use std::rc::Rc;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xw_client::{BatchSpec, Client, ClientError};
use xw_common::{digest, Clock, ManualClock, Timestamp};
use xw_coordinator::{read_journal, Coordinator, CoordinatorConfig, JournalEvent, Service, SharedService, UserEntry};
use xw_protocol::{
    open_session_with_rng, password_digest, AppKind, Blob, Body, CoordinatorFingerprint, CoordinatorIdentity,
    Credential, Directive, ErrorCode, Handler, Retention, Role, Rpc, RpcError, SessionError, TaskStatus, Transport,
    TransportError, TxIdGen, WorkerCapabilities,
};

use crate::metrics::{AssignmentRecord, FinalTask, RecoveryCheck, RunMetrics, TaskRow, Tick};
use crate::scenario::{FaultKind, ScenarioError, ScenarioSpec, Target, Trigger};

const EPOCH_MS: u64 = 1_000_000_000;
const ADMIN: &str = "admin";
const SUBMITTER: &str = "harness";
const VOLUNTEER: &str = "volunteer";
const APP_REF: &str = "aires";
/// Retry delays grow from one alive period up to this many.
const BACKOFF_CAP: u64 = 10;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("scenario {name} reached its cap of {cap_s} s with {finished} of {total} tasks finished")]
    ScenarioTimeout {
        name: String,
        cap_s: f64,
        finished: usize,
        total: usize,
    },
    #[error("coordinator failure: {0}")]
    Coordinator(String),
    #[error("client failure: {0}")]
    Client(#[from] ClientError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn password(login: &str) -> String {
    format!("{login}-secret")
}

fn ms(seconds: f64) -> u64 {
    (seconds * 1000.0).round() as u64
}

fn secs(ms: u64) -> f64 {
    ms as f64 / 1000.0
}

struct Net {
    service: Option<SharedService>,
    cut: HashSet<usize>,
}

/// In-process link to the coordinator. `actor` is the worker index, or
/// `None` for the submitting client, which is never partitioned.
#[derive(Clone)]
struct Link {
    net: Rc<RefCell<Net>>,
    actor: Option<usize>,
}

impl Transport for Link {
    fn exchange(&self, request: &[u8]) -> Result<Vec<u8>, TransportError> {
        let net = self.net.borrow();
        if self.actor.is_some_and(|a| net.cut.contains(&a)) {
            return Err(TransportError::Unreachable("partitioned".into()));
        }
        match &net.service {
            Some(s) => Ok(s.handle_frame(request)),
            None => Err(TransportError::Unreachable("coordinator down".into())),
        }
    }
}

struct Held {
    task_id: String,
    params: Vec<u8>,
    attempt: u32,
    assigned_at: u64,
}

enum Phase {
    /// Not started yet, or killed.
    Down,
    Idle,
    Computing {
        started: u64,
    },
    Uploading {
        payload: Vec<u8>,
        txid: String,
        started: u64,
        done: u64,
    },
}

struct VWorker {
    id: String,
    pool: usize,
    speed: f64,
    slowdown: f64,
    rpc: Rpc<Link>,
    token: Option<String>,
    /// Survives a kill, as the agent's state file does.
    held: Option<Held>,
    phase: Phase,
    /// Bumped whenever pending events of this worker become stale.
    epoch: u64,
    backoff_ms: u64,
    started_once: bool,
}

enum CallError {
    Offline,
    Remote(RpcError),
}

#[derive(Clone, Copy, Debug)]
enum Ev {
    Start(usize),
    Pull(usize),
    Alive(usize),
    Done(usize),
    Upload(usize),
    Sweep,
    Tick,
    Fault(usize),
}

#[derive(PartialEq, Eq, PartialOrd, Ord)]
struct Key {
    at: u64,
    /// Samples run after every other event of the same instant.
    class: u8,
    seq: u64,
}

struct Sim<'a> {
    spec: &'a ScenarioSpec,
    _dir: tempfile::TempDir,
    config: CoordinatorConfig,
    fingerprint: CoordinatorFingerprint,
    clock: Arc<ManualClock>,
    net: Rc<RefCell<Net>>,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    queue: BinaryHeap<Reverse<(Key, u64, EvSlot)>>,
    workers: Vec<VWorker>,
    period: u64,
    caps: WorkerCapabilities,
    labels: BTreeMap<String, String>,
    completed: BTreeSet<String>,
    finished: usize,
    next_fault: usize,
    last_fault_at: u64,
    killed_at: Option<(u64, xw_common::Digest)>,
    metrics: RunMetrics,
}

/// Event plus the worker epoch it was scheduled under.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
struct EvSlot(u8, usize);

impl EvSlot {
    fn pack(ev: Ev) -> Self {
        match ev {
            Ev::Start(w) => EvSlot(0, w),
            Ev::Pull(w) => EvSlot(1, w),
            Ev::Alive(w) => EvSlot(2, w),
            Ev::Done(w) => EvSlot(3, w),
            Ev::Upload(w) => EvSlot(4, w),
            Ev::Sweep => EvSlot(5, 0),
            Ev::Tick => EvSlot(6, 0),
            Ev::Fault(i) => EvSlot(7, i),
        }
    }

    fn unpack(self) -> Ev {
        match self.0 {
            0 => Ev::Start(self.1),
            1 => Ev::Pull(self.1),
            2 => Ev::Alive(self.1),
            3 => Ev::Done(self.1),
            4 => Ev::Upload(self.1),
            5 => Ev::Sweep,
            6 => Ev::Tick,
            _ => Ev::Fault(self.1),
        }
    }
}

/// Runs `spec` to completion and returns its measurements.
pub fn run_scenario(spec: &ScenarioSpec) -> Result<RunMetrics, HarnessError> {
    spec.validate()?;
    let mut sim = Sim::new(spec)?;
    sim.submit()?;
    sim.run()?;
    sim.finish()
}

impl<'a> Sim<'a> {
    fn new(spec: &'a ScenarioSpec) -> Result<Self, HarnessError> {
        let dir = tempfile::tempdir()?;
        let identity = CoordinatorIdentity::from_seed(*digest(&spec.seed.to_le_bytes()).as_bytes());
        let mut config = CoordinatorConfig::new(dir.path().join("journal"), &identity, ADMIN);
        config.sync_journal = false;
        config.alive_period_s = spec.alive_period_s;
        config.alive_timeout_s = Some(spec.alive_timeout_s());
        config.max_attempts = spec.max_attempts;
        config.acl = [
            (ADMIN, Role::Client),
            (SUBMITTER, Role::Client),
            (VOLUNTEER, Role::Worker),
        ]
        .into_iter()
        .map(|(login, role)| UserEntry {
            login: login.to_string(),
            password_digest: password_digest(login, &password(login)),
            role,
        })
        .collect();
        let clock = Arc::new(ManualClock::new(Timestamp::from_millis(EPOCH_MS)));
        let (coordinator, _) = Coordinator::recover(config.clone(), clock.clone() as Arc<dyn Clock>)
            .map_err(|e| HarnessError::Coordinator(e.to_string()))?;
        let net = Rc::new(RefCell::new(Net {
            service: Some(SharedService::new(Service::new(coordinator))),
            cut: HashSet::new(),
        }));
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
        let mut workers = Vec::new();
        let mut metrics = RunMetrics {
            scenario: spec.name.clone(),
            seed: spec.seed,
            pool_size: spec.pool_size(),
            task_count: spec.workload.task_count,
            ..Default::default()
        };
        let mut sim_queue = Vec::new();
        for (p, pool) in spec.pools.iter().enumerate() {
            for i in 0..pool.count {
                let id = format!("w{p}-{i:03}");
                let index = workers.len();
                let link = Link {
                    net: net.clone(),
                    actor: Some(index),
                };
                let join = pool.join_time + rng.gen_range(0.0..=pool.batch_policy_jitter);
                sim_queue.push((ms(join), index));
                metrics.worker_pools.insert(id.clone(), p);
                workers.push(VWorker {
                    rpc: Rpc::with_txids(link, TxIdGen::new(id.clone())),
                    id,
                    pool: p,
                    speed: pool.speed_factor,
                    slowdown: 1.0,
                    token: None,
                    held: None,
                    phase: Phase::Down,
                    epoch: 0,
                    backoff_ms: 0,
                    started_once: false,
                });
            }
        }
        let mut sim = Sim {
            spec,
            _dir: dir,
            config,
            fingerprint: identity.fingerprint(),
            clock,
            net,
            rng,
            now: 0,
            seq: 0,
            queue: BinaryHeap::new(),
            workers,
            period: ms(spec.alive_period_s).max(1),
            caps: WorkerCapabilities::local(),
            labels: BTreeMap::new(),
            completed: BTreeSet::new(),
            finished: 0,
            next_fault: 0,
            last_fault_at: 0,
            killed_at: None,
            metrics,
        };
        for (at, w) in sim_queue {
            sim.schedule(at, Ev::Start(w));
        }
        sim.schedule(sim.period, Ev::Sweep);
        sim.schedule(0, Ev::Tick);
        sim.arm_fault();
        Ok(sim)
    }

    fn schedule(&mut self, at: u64, ev: Ev) {
        let epoch = match ev {
            Ev::Pull(w) | Ev::Alive(w) | Ev::Done(w) | Ev::Upload(w) => self.workers[w].epoch,
            _ => 0,
        };
        let key = Key {
            at,
            class: matches!(ev, Ev::Tick) as u8,
            seq: self.seq,
        };
        self.seq += 1;
        self.queue.push(Reverse((key, epoch, EvSlot::pack(ev))));
    }

    fn client(&self, login: &str) -> Client<Link> {
        let link = Link {
            net: self.net.clone(),
            actor: None,
        };
        Client::new(link, self.fingerprint, login, &password(login))
    }

    /// Registers the application and admits the whole bag at time zero.
    fn submit(&mut self) -> Result<(), HarnessError> {
        self.client(ADMIN)
            .register_app(APP_REF, AppKind::NativeBinary, b"simulated shower generator")?;
        let mut batch = BatchSpec::new(APP_REF, Retention::DiscardOnFetch);
        for i in 0..self.spec.workload.task_count {
            batch.push(format!("run-{i:04}"), format!("seed={} run={i}", self.spec.seed));
        }
        let ids = self.client(SUBMITTER).submit_batch(&batch)?;
        self.labels = ids.into_iter().map(|(label, id)| (id, label)).collect();
        Ok(())
    }

    fn run(&mut self) -> Result<(), HarnessError> {
        let total = self.spec.workload.task_count;
        let cap = ms(self.spec.cap_s);
        while self.finished < total {
            let Some(Reverse((key, epoch, slot))) = self.queue.pop() else {
                return Err(self.timeout());
            };
            if key.at > cap {
                return Err(self.timeout());
            }
            self.now = key.at;
            self.clock.set(Timestamp::from_millis(EPOCH_MS + self.now));
            let ev = slot.unpack();
            if let Ev::Pull(w) | Ev::Alive(w) | Ev::Done(w) | Ev::Upload(w) = ev {
                if self.workers[w].epoch != epoch {
                    continue;
                }
            }
            match ev {
                Ev::Start(w) => self.on_start(w),
                Ev::Pull(w) => self.on_pull(w),
                Ev::Alive(w) => self.on_alive(w),
                Ev::Done(w) => self.on_done(w),
                Ev::Upload(w) => self.on_upload(w),
                Ev::Sweep => self.on_sweep()?,
                Ev::Tick => self.on_tick(),
                Ev::Fault(i) => self.on_fault(i)?,
            }
        }
        self.metrics.makespan = secs(self.now);
        let last = self.metrics.per_tick.last().map(|t| ms(t.time));
        if !matches!(last, Some(t) if t >= self.now) {
            let tick = ms(self.spec.tick_s).max(1);
            let at = self.now.div_ceil(tick) * tick;
            self.push_sample(at);
        }
        Ok(())
    }

    fn timeout(&self) -> HarnessError {
        HarnessError::ScenarioTimeout {
            name: self.spec.name.clone(),
            cap_s: self.spec.cap_s,
            finished: self.finished,
            total: self.spec.workload.task_count,
        }
    }

    // ---- worker behaviour -------------------------------------------------

    fn call(&mut self, w: usize, txid: Option<&str>, make: impl Fn(String) -> Body) -> Result<Body, CallError> {
        let fingerprint = self.fingerprint;
        let worker = &mut self.workers[w];
        for _ in 0..2 {
            let token = match &worker.token {
                Some(t) => t.clone(),
                None => {
                    let cred = Credential::new(VOLUNTEER, password(VOLUNTEER), Role::Worker);
                    match open_session_with_rng(&worker.rpc, &fingerprint, &cred, &mut self.rng) {
                        Ok(t) => {
                            worker.token = Some(t.token.clone());
                            t.token
                        }
                        Err(SessionError::Unreachable(_)) => return Err(CallError::Offline),
                        Err(e) => panic!("simulated worker cannot log in: {e}"),
                    }
                }
            };
            let reply = match txid {
                Some(t) => worker.rpc.call_with_txid(t, make(token)),
                None => worker.rpc.call(make(token)),
            };
            match reply {
                Err(RpcError::Remote {
                    code: ErrorCode::AuthDenied,
                    ..
                }) if worker.token.is_some() => worker.token = None,
                Err(e) if e.is_unreachable() => return Err(CallError::Offline),
                Err(e) => return Err(CallError::Remote(e)),
                Ok(b) => {
                    worker.backoff_ms = 0;
                    return Ok(b);
                }
            }
        }
        Err(CallError::Remote(RpcError::Remote {
            code: ErrorCode::AuthDenied,
            message: "session refused".into(),
            task_id: None,
        }))
    }

    fn backoff(&mut self, w: usize) -> u64 {
        let worker = &mut self.workers[w];
        worker.backoff_ms = if worker.backoff_ms == 0 {
            self.period
        } else {
            (worker.backoff_ms * 2).min(self.period * BACKOFF_CAP)
        };
        self.now + worker.backoff_ms
    }

    fn invalidate(&mut self, w: usize) {
        self.workers[w].epoch += 1;
    }

    fn go_idle(&mut self, w: usize) {
        self.invalidate(w);
        let worker = &mut self.workers[w];
        worker.held = None;
        worker.phase = Phase::Idle;
        self.schedule(self.now, Ev::Pull(w));
    }

    fn on_start(&mut self, w: usize) {
        if !matches!(self.workers[w].phase, Phase::Down) {
            return;
        }
        self.invalidate(w);
        self.workers[w].started_once = true;
        self.workers[w].phase = Phase::Idle;
        let Some(task) = self.workers[w].held.as_ref().map(|h| h.task_id.clone()) else {
            self.schedule(self.now, Ev::Pull(w));
            return;
        };
        // A restarted worker asks whether its task is still wanted before
        // recomputing it from the beginning.
        let id = self.workers[w].id.clone();
        match self.call(w, None, |token| Body::Alive {
            token,
            worker: id.clone(),
            task: task.clone(),
        }) {
            Ok(Body::AliveDirective {
                directive: Directive::Stop,
                ..
            })
            | Err(CallError::Remote(_)) => self.go_idle(w),
            _ => self.start_compute(w),
        }
    }

    fn on_pull(&mut self, w: usize) {
        if !matches!(self.workers[w].phase, Phase::Idle) {
            return;
        }
        let (id, caps) = (self.workers[w].id.clone(), self.caps.clone());
        match self.call(w, None, |token| Body::RequestWork {
            token,
            worker_id: id.clone(),
            capabilities: caps.clone(),
        }) {
            Ok(Body::WorkAssignment {
                task_id,
                params,
                attempt,
                ..
            }) => {
                self.metrics.assignments.push(AssignmentRecord {
                    time_ms: self.now,
                    task_id: task_id.clone(),
                    worker_id: id,
                    attempt,
                });
                self.workers[w].held = Some(Held {
                    task_id,
                    params: params.into_vec(),
                    attempt,
                    assigned_at: self.now,
                });
                self.start_compute(w);
            }
            Ok(_) => self.schedule(self.now + self.period, Ev::Pull(w)),
            Err(CallError::Offline) => {
                let at = self.backoff(w);
                self.schedule(at, Ev::Pull(w));
            }
            Err(CallError::Remote(e)) => {
                if let RpcError::Remote {
                    code: ErrorCode::WorkerBusy,
                    task_id: Some(task),
                    ..
                } = &e
                {
                    // The coordinator still counts on a task this worker
                    // no longer holds; give it back.
                    let (id, task) = (self.workers[w].id.clone(), task.clone());
                    let _ = self.call(w, None, |token| Body::ReportFailure {
                        token,
                        worker: id.clone(),
                        task: task.clone(),
                        reason: "assignment lost".into(),
                    });
                } else {
                    log::warn!("{}: work request failed: {e}", self.workers[w].id);
                }
                self.schedule(self.now + self.period, Ev::Pull(w));
            }
        }
    }

    fn start_compute(&mut self, w: usize) {
        self.invalidate(w);
        let stretch = 1.0 + self.rng.gen_range(0.0..=self.spec.exec_jitter);
        let worker = &mut self.workers[w];
        let seconds = self.spec.task_seconds(worker.speed) * worker.slowdown * stretch;
        worker.phase = Phase::Computing { started: self.now };
        let done = self.now + ms(seconds).max(1);
        self.schedule(done, Ev::Done(w));
        self.schedule(self.now + self.period, Ev::Alive(w));
    }

    fn on_alive(&mut self, w: usize) {
        if !matches!(self.workers[w].phase, Phase::Computing { .. }) {
            return;
        }
        let id = self.workers[w].id.clone();
        let task = self.workers[w]
            .held
            .as_ref()
            .expect("computing holds a task")
            .task_id
            .clone();
        match self.call(w, None, |token| Body::Alive {
            token,
            worker: id.clone(),
            task: task.clone(),
        }) {
            Ok(Body::AliveDirective {
                directive: Directive::Continue,
                ..
            }) => self.schedule(self.now + self.period, Ev::Alive(w)),
            Ok(_) | Err(CallError::Remote(_)) => self.go_idle(w),
            Err(CallError::Offline) => {
                let at = self.backoff(w);
                self.schedule(at, Ev::Alive(w));
            }
        }
    }

    fn on_done(&mut self, w: usize) {
        let Phase::Computing { started } = self.workers[w].phase else {
            return;
        };
        self.invalidate(w);
        let worker = &mut self.workers[w];
        let held = worker.held.as_ref().expect("computing holds a task");
        let payload = digest(&held.params).to_hex().into_bytes();
        let txid = format!("{}-upload-{}-{}", worker.id, held.task_id, held.attempt);
        worker.phase = Phase::Uploading {
            payload,
            txid,
            started,
            done: self.now,
        };
        self.on_upload(w);
    }

    fn on_upload(&mut self, w: usize) {
        let Phase::Uploading {
            payload,
            txid,
            started,
            done,
        } = &self.workers[w].phase
        else {
            return;
        };
        let (payload, txid, started, done) = (payload.clone(), txid.clone(), *started, *done);
        let id = self.workers[w].id.clone();
        let held = self.workers[w].held.as_ref().expect("uploading holds a task");
        let (task, assigned_at) = (held.task_id.clone(), held.assigned_at);
        match self.call(w, Some(&txid), |token| Body::UploadResult {
            token,
            worker: id.clone(),
            task: task.clone(),
            payload: Blob::new(payload.clone()),
        }) {
            Ok(Body::ResultAck { .. }) => {
                *self.metrics.accepted_uploads.entry(task.clone()).or_default() += 1;
                if self.completed.insert(task.clone()) {
                    self.metrics.per_task.push(TaskRow {
                        task_id: task,
                        worker_id: id,
                        queue_wait: secs(assigned_at),
                        execution_seconds: secs(done - started),
                    });
                }
                self.go_idle(w);
                self.refresh_finished();
                self.arm_fault();
            }
            Ok(_) | Err(CallError::Remote(_)) => self.go_idle(w),
            Err(CallError::Offline) => {
                let at = self.backoff(w);
                self.schedule(at, Ev::Upload(w));
            }
        }
    }

    // ---- coordinator side -----------------------------------------------------

    fn service(&self) -> Option<SharedService> {
        self.net.borrow().service.clone()
    }

    fn on_sweep(&mut self) -> Result<(), HarnessError> {
        if let Some(s) = self.service() {
            let report = s
                .lock()
                .sweep(Timestamp::from_millis(EPOCH_MS + self.now))
                .map_err(|e| HarnessError::Coordinator(e.to_string()))?;
            if !report.aborted.is_empty() {
                self.refresh_finished();
            }
        }
        self.schedule(self.now + self.period, Ev::Sweep);
        Ok(())
    }

    /// Counts tasks in a final state.
    fn refresh_finished(&mut self) {
        if let Some(s) = self.service() {
            let s = s.lock();
            self.finished = s
                .coordinator()
                .state()
                .tasks()
                .filter(|t| matches!(t.status, TaskStatus::Completed | TaskStatus::Aborted))
                .count();
        }
    }

    fn on_tick(&mut self) {
        self.push_sample(self.now);
        self.schedule(self.now + ms(self.spec.tick_s).max(1), Ev::Tick);
    }

    fn push_sample(&mut self, at: u64) {
        let busy = self
            .workers
            .iter()
            .filter(|w| matches!(w.phase, Phase::Computing { .. }))
            .count();
        let connected = self.workers.iter().filter(|w| !matches!(w.phase, Phase::Down)).count();
        self.metrics.per_tick.push(Tick {
            time: secs(at),
            busy_workers: busy,
            connected_workers: connected,
        });
    }

    // ---- faults ---------------------------------------------------------------

    /// Schedules the next fault once its trigger can be decided.
    fn arm_fault(&mut self) {
        let Some(f) = self.spec.faults.get(self.next_fault) else {
            return;
        };
        let at = match f.at {
            Trigger::At(t) => ms(t).max(self.now),
            Trigger::After(d) => self.last_fault_at + ms(d),
            Trigger::AtProgress(p) => {
                let done = self.completed.len() as f64 / self.spec.workload.task_count.max(1) as f64;
                if done + 1e-12 < p {
                    return;
                }
                self.now
            }
        };
        let i = self.next_fault;
        self.next_fault += 1;
        self.schedule(at, Ev::Fault(i));
    }

    fn targets(&mut self, target: &Target, eligible: impl Fn(&VWorker) -> bool) -> Vec<usize> {
        let mut pool: Vec<usize> = (0..self.workers.len())
            .filter(|&i| eligible(&self.workers[i]))
            .collect();
        match target {
            Target::All => pool,
            Target::Pool(p) => pool.into_iter().filter(|&i| self.workers[i].pool == *p).collect(),
            Target::Worker(id) => pool.into_iter().filter(|&i| self.workers[i].id == *id).collect(),
            Target::Fraction(x) => {
                let n = (x * pool.len() as f64).round() as usize;
                pool.shuffle(&mut self.rng);
                pool.truncate(n);
                pool.sort_unstable();
                pool
            }
        }
    }

    fn on_fault(&mut self, i: usize) -> Result<(), HarnessError> {
        let fault = self.spec.faults[i].clone();
        log::debug!("t={} fault {:?} on {:?}", secs(self.now), fault.kind, fault.target);
        self.last_fault_at = self.now;
        match fault.kind {
            FaultKind::WorkerKill => {
                for w in self.targets(&fault.target, |w| !matches!(w.phase, Phase::Down)) {
                    self.invalidate(w);
                    let worker = &mut self.workers[w];
                    worker.phase = Phase::Down;
                    worker.token = None;
                    worker.backoff_ms = 0;
                }
            }
            FaultKind::WorkerRestart => {
                for w in self.targets(&fault.target, |w| matches!(w.phase, Phase::Down) && w.started_once) {
                    self.schedule(self.now, Ev::Start(w));
                }
            }
            FaultKind::Partition => {
                let cut = self.net.borrow().cut.clone();
                for w in self.targets(&fault.target, |_| true) {
                    if !cut.contains(&w) {
                        self.net.borrow_mut().cut.insert(w);
                    }
                }
            }
            FaultKind::Heal => {
                for w in self.targets(&fault.target, |_| true) {
                    self.net.borrow_mut().cut.remove(&w);
                }
            }
            FaultKind::Slowdown { factor } => {
                for w in self.targets(&fault.target, |_| true) {
                    self.workers[w].slowdown *= factor;
                }
            }
            FaultKind::CoordinatorKill => {
                let service = self
                    .net
                    .borrow_mut()
                    .service
                    .take()
                    .expect("validated: coordinator is up");
                let before = service.lock().coordinator().state_hash();
                drop(service);
                self.killed_at = Some((self.now, before));
            }
            FaultKind::CoordinatorRestart => {
                let (killed_at_ms, before) = self.killed_at.take().expect("validated: follows a kill");
                let (coordinator, _) = Coordinator::recover(self.config.clone(), self.clock.clone() as Arc<dyn Clock>)
                    .map_err(|e| HarnessError::Coordinator(e.to_string()))?;
                self.metrics.recoveries.push(RecoveryCheck {
                    killed_at_ms,
                    restarted_at_ms: self.now,
                    before,
                    after: coordinator.state_hash(),
                });
                self.net.borrow_mut().service = Some(SharedService::new(Service::new(coordinator)));
            }
        }
        self.arm_fault();
        Ok(())
    }

    // ---- results --------------------------------------------------------------

    fn finish(mut self) -> Result<RunMetrics, HarnessError> {
        let mut client = self.client(SUBMITTER);
        for t in client.list_tasks()? {
            match t.status {
                TaskStatus::Completed => {
                    let payload = client.fetch_result(&t.task_id)?;
                    self.metrics.result_digests.insert(t.label, digest(&payload));
                    self.metrics.completed += 1;
                }
                TaskStatus::Aborted => self.metrics.aborted += 1,
                _ => {}
            }
        }
        let service = self.service().expect("the run ends with the coordinator up");
        {
            let s = service.lock();
            let c = s.coordinator();
            self.metrics.final_state_hash = Some(c.state_hash());
            for t in c.state().tasks() {
                let row = FinalTask {
                    status: t.status,
                    attempt: t.attempt,
                };
                self.metrics.final_tasks.insert(t.task_id.clone(), row);
            }
        }
        let journal = read_journal(self.journal_path()).map_err(|e| HarnessError::Coordinator(e.to_string()))?;
        for entry in journal.entries {
            if let JournalEvent::ResultStored { task_id, .. } = entry.event {
                *self.metrics.stored_results.entry(task_id).or_default() += 1;
            }
        }
        Ok(self.metrics)
    }

    fn journal_path(&self) -> PathBuf {
        self.config.journal_path.clone()
    }
}
