//! The worker agent: pull a task, run it, report alive while it runs, send
//! the result back, repeat.

use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use xw_common::{digest, Clock, SystemClock};
use xw_protocol::{
    open_session, Body, Credential, Directive, ErrorCode, Role, Rpc, RpcError, SessionError, Transport, TransportError,
    TxIdGen,
};

use crate::config::WorkerConfig;
use crate::policy::{policy_allows, HostProbe, ProcHostProbe};
use crate::sandbox::{CancelToken, Executor, NativeExecutor, SandboxError, SandboxOutput};
use crate::state::{HeldAssignment, Phase, StateError, StateLock, StateStore, WorkerState};

/// Exponential backoff: one base period, doubling, capped at ten.
#[derive(Debug, Clone)]
pub struct Backoff {
    base: Duration,
    next: Duration,
}

impl Backoff {
    pub const CAP_FACTOR: u32 = 10;

    pub fn new(base: Duration) -> Self {
        Backoff { base, next: base }
    }

    pub fn next_delay(&mut self) -> Duration {
        let d = self.next;
        self.next = (self.next * 2).min(self.base * Self::CAP_FACTOR);
        d
    }

    pub fn reset(&mut self) {
        self.next = self.base;
    }
}

/// Asks a running agent to stop; wakes it from any wait.
#[derive(Debug, Clone, Default)]
pub struct StopHandle(Arc<(AtomicBool, Mutex<()>, Condvar)>);

impl StopHandle {
    pub fn stop(&self) {
        self.0 .0.store(true, Ordering::SeqCst);
        let _g = self.0 .1.lock().unwrap_or_else(|p| p.into_inner());
        self.0 .2.notify_all();
    }

    pub fn is_stopped(&self) -> bool {
        self.0 .0.load(Ordering::SeqCst)
    }

    /// Sleeps for `d` unless stopped first; true when stopped.
    pub fn sleep(&self, d: Duration) -> bool {
        let g = self.0 .1.lock().unwrap_or_else(|p| p.into_inner());
        let _ = self
            .0
             .2
            .wait_timeout_while(g, d, |_| !self.is_stopped())
            .unwrap_or_else(|p| p.into_inner());
        self.is_stopped()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AgentStats {
    pub request_work_calls: u64,
    pub tasks_started: u64,
    pub results_accepted: u64,
    pub results_rejected: u64,
    pub failures_reported: u64,
    pub stops_obeyed: u64,
    pub offline_episodes: u64,
}

#[derive(Debug, thiserror::Error)]
pub enum AgentError {
    #[error(transparent)]
    State(#[from] StateError),
    #[error("worker stopped")]
    Stopped,
}

/// Loads the persisted state; unreadable state means starting clean.
pub fn restart_recovery(store: &StateStore, default_id: impl FnOnce() -> String) -> Result<WorkerState, StateError> {
    match store.load() {
        Ok(Some(s)) => Ok(s),
        Ok(None) => Ok(WorkerState::idle(default_id())),
        Err(StateError::CorruptState(why)) => {
            log::warn!("discarding unreadable worker state: {why}");
            Ok(WorkerState::idle(default_id()))
        }
        Err(e) => Err(e),
    }
}

/// A failed Alive during a compute: keep computing, just note we're offline.
pub fn offline_continue(mut state: WorkerState) -> WorkerState {
    if state.current_assignment.is_some() {
        state.phase = Phase::OfflineComputing;
    }
    state
}

enum Outcome<T> {
    Done(T),
    /// Coordinator unreachable.
    Offline(RpcError),
    Stopped,
}

pub struct Agent<T: Transport> {
    cfg: WorkerConfig,
    rpc: Rpc<T>,
    executors: Vec<Arc<dyn Executor>>,
    probe: Box<dyn HostProbe>,
    clock: Arc<dyn Clock>,
    store: StateStore,
    state: WorkerState,
    token: Option<String>,
    stop: StopHandle,
    stats: AgentStats,
    resumed: bool,
    pending_pull: Option<String>,
    _lock: StateLock,
}

impl<T: Transport> std::fmt::Debug for Agent<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Agent")
            .field("state", &self.state)
            .field("stats", &self.stats)
            .finish()
    }
}

impl<T: Transport> Agent<T> {
    /// Locks the state directory and recovers any interrupted assignment.
    pub fn new(cfg: WorkerConfig, transport: T) -> Result<Self, AgentError> {
        let lock = StateLock::acquire(&cfg.state_dir)?;
        let store = StateStore::new(&cfg.state_dir);
        let state = restart_recovery(&store, || {
            cfg.worker_id
                .clone()
                .unwrap_or_else(|| format!("w-{}", &TxIdGen::random().next_id()[..8]))
        })?;
        store.save(&state)?;
        let resumed = state.current_assignment.is_some();
        if let Some(a) = &state.current_assignment {
            log::info!("resuming {} from the beginning", a.task_id);
        }
        let txids = TxIdGen::new(format!("{}-{}", state.worker_id, &TxIdGen::random().next_id()[..8]));
        Ok(Agent {
            rpc: Rpc::with_txids(transport, txids),
            executors: vec![Arc::new(NativeExecutor)],
            probe: Box::new(ProcHostProbe),
            clock: Arc::new(SystemClock::new()),
            store,
            state,
            token: None,
            stop: StopHandle::default(),
            stats: AgentStats::default(),
            resumed,
            pending_pull: None,
            cfg,
            _lock: lock,
        })
    }

    pub fn with_probe(mut self, probe: impl HostProbe + 'static) -> Self {
        self.probe = Box::new(probe);
        self
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    /// Adds or replaces the executor for its application kind.
    pub fn with_executor(mut self, executor: Arc<dyn Executor>) -> Self {
        self.executors.retain(|e| e.kind() != executor.kind());
        self.executors.push(executor);
        self
    }

    pub fn stop_handle(&self) -> StopHandle {
        self.stop.clone()
    }

    pub fn state(&self) -> &WorkerState {
        &self.state
    }

    pub fn stats(&self) -> &AgentStats {
        &self.stats
    }

    pub fn worker_id(&self) -> &str {
        &self.state.worker_id
    }

    /// Runs until stopped. An interrupted assignment stays persisted so the
    /// next start redoes it.
    pub fn run(&mut self) -> Result<AgentStats, AgentError> {
        let period = self.cfg.alive_period();
        let mut backoff = Backoff::new(period);
        while !self.stop.is_stopped() {
            let step = if self.state.current_assignment.is_some() {
                self.run_assignment()
            } else {
                self.pull_once()
            };
            let wait = match step {
                Ok(Some(wait)) => {
                    backoff.reset();
                    wait
                }
                Ok(None) => {
                    backoff.reset();
                    Duration::ZERO
                }
                Err(Outcome::Offline(e)) => {
                    let d = backoff.next_delay();
                    log::info!("coordinator unreachable ({e}); retrying in {d:?}");
                    d
                }
                Err(Outcome::Stopped) => break,
                Err(Outcome::Done(e)) => return Err(e),
            };
            if !wait.is_zero() && self.stop.sleep(wait) {
                break;
            }
        }
        Ok(self.stats.clone())
    }

    fn persist(&mut self, phase: Phase) -> Result<(), Outcome<AgentError>> {
        self.state.phase = phase;
        self.store.save(&self.state).map_err(|e| Outcome::Done(e.into()))
    }

    fn clear(&mut self) -> Result<(), Outcome<AgentError>> {
        self.state.current_assignment = None;
        self.resumed = false;
        self.persist(Phase::Idle)
    }

    /// Logs in when needed and performs one call, refreshing an expired
    /// session once.
    fn call(&mut self, txid: &str, make: impl Fn(String) -> Body) -> Result<Body, Outcome<RpcError>> {
        for _ in 0..2 {
            let token = match &self.token {
                Some(t) => t.clone(),
                None => {
                    let cred = Credential::new(&self.cfg.login, &self.cfg.password, Role::Worker);
                    match open_session(&self.rpc, &self.cfg.fingerprint, &cred) {
                        Ok(t) => {
                            self.token = Some(t.token.clone());
                            t.token
                        }
                        Err(SessionError::Unreachable(e)) => {
                            return Err(Outcome::Offline(TransportError::Unreachable(e).into()))
                        }
                        Err(e) => {
                            log::error!("cannot open session: {e}");
                            return Err(Outcome::Offline(RpcError::Remote {
                                code: ErrorCode::AuthDenied,
                                message: e.to_string(),
                                task_id: None,
                            }));
                        }
                    }
                }
            };
            match self.rpc.call_with_txid(txid, make(token)) {
                Err(RpcError::Remote {
                    code: ErrorCode::AuthDenied,
                    ..
                }) if self.token.is_some() => self.token = None,
                Err(e) if e.is_unreachable() => return Err(Outcome::Offline(e)),
                Err(e) => return Err(Outcome::Done(e)),
                Ok(b) => return Ok(b),
            }
        }
        Err(Outcome::Offline(RpcError::Remote {
            code: ErrorCode::AuthDenied,
            message: "session refused".into(),
            task_id: None,
        }))
    }

    /// Asks for one task; returns how long to wait before the next step.
    fn pull_once(&mut self) -> Result<Option<Duration>, Outcome<AgentError>> {
        let period = self.cfg.alive_period();
        if !policy_allows(&self.cfg.policy, self.clock.now(), &self.probe.sample()) {
            return Ok(Some(period));
        }
        let worker_id = self.state.worker_id.clone();
        let caps = self.cfg.capabilities();
        // A lost reply is retried under the same txid so the coordinator
        // hands back the same assignment.
        let txid = self.pending_pull.get_or_insert_with(|| self.rpc.next_txid()).clone();
        self.stats.request_work_calls += 1;
        let reply = match self.call(&txid, |token| Body::RequestWork {
            token,
            worker_id: worker_id.clone(),
            capabilities: caps.clone(),
        }) {
            Err(Outcome::Offline(e)) => return Err(Outcome::Offline(e)),
            Err(Outcome::Stopped) => return Err(Outcome::Stopped),
            Err(Outcome::Done(e)) => Err(e),
            Ok(b) => Ok(b),
        };
        self.pending_pull = None;
        match reply {
            Ok(Body::WorkAssignment {
                task_id,
                app_ref,
                app_kind,
                app_digest,
                params,
                attempt,
            }) => {
                log::info!("assigned {task_id} (attempt {attempt})");
                self.state.current_assignment = Some(HeldAssignment::new(
                    task_id, app_ref, app_kind, app_digest, params, attempt,
                ));
                self.resumed = false;
                self.persist(Phase::Downloading)?;
                Ok(None)
            }
            Ok(Body::NoWork {}) => Ok(Some(period)),
            Ok(other) => {
                log::warn!("unexpected reply to request_work: {:?}", other.kind());
                Ok(Some(period))
            }
            Err(RpcError::Remote {
                code: ErrorCode::WorkerBusy,
                task_id: Some(task),
                ..
            }) => {
                // The coordinator thinks we hold a task we have no record of.
                log::warn!("coordinator says we hold {task}; giving it back");
                self.report_failure(&task, "worker lost its local state")?;
                Ok(None)
            }
            Err(e) => {
                log::warn!("request_work failed: {e}");
                Ok(Some(period))
            }
        }
    }

    fn run_assignment(&mut self) -> Result<Option<Duration>, Outcome<AgentError>> {
        let a = self.state.current_assignment.clone().expect("caller checked");
        let period = self.cfg.alive_period();
        self.persist(Phase::Downloading)?;
        let Some(executor) = self.executors.iter().find(|e| e.kind() == a.app_kind).cloned() else {
            self.report_failure(&a.task_id, &SandboxError::Unsupported(a.app_kind).to_string())?;
            return self.clear().map(|_| None);
        };
        let app = match self.obtain_app(&a)? {
            Some(app) => app,
            None => {
                self.report_failure(&a.task_id, "application payload failed digest verification")?;
                return self.clear().map(|_| None);
            }
        };

        self.stats.tasks_started += 1;
        self.persist(Phase::Computing)?;
        if self.resumed {
            // Tell the coordinator what we are (re)computing before spending
            // any time on it.
            match self.alive(&a.task_id) {
                Ok(Directive::Stop) => {
                    log::info!("{} was reassigned while we were down; dropping it", a.task_id);
                    self.stats.stops_obeyed += 1;
                    return self.clear().map(|_| None);
                }
                Ok(Directive::Continue) => {}
                Err(Outcome::Offline(_)) => {
                    self.state = offline_continue(self.state.clone());
                    self.stats.offline_episodes += 1;
                    self.persist(Phase::OfflineComputing)?;
                }
                Err(Outcome::Stopped) => return Err(Outcome::Stopped),
                Err(Outcome::Done(e)) => log::warn!("alive failed: {e}"),
            }
        }

        let limits = self.cfg.sandbox_limits();
        if limits.fs_root.exists() {
            let _ = crate::sandbox::wipe_dir(&limits.fs_root);
        }
        let cancel = CancelToken::new();
        let (tx, rx) = mpsc::channel::<Result<SandboxOutput, SandboxError>>();
        let result = std::thread::scope(|scope| {
            let params = a.params.as_slice();
            let cancel_child = cancel.clone();
            let exec = executor.clone();
            let app_bytes = &app;
            let limits = &limits;
            scope.spawn(move || {
                let _ = tx.send(exec.execute(app_bytes, params, limits, &cancel_child));
            });
            self.supervise(&a, &rx, &cancel, period)
        });
        match result {
            Supervised::Finished(Ok(out)) => {
                self.persist(Phase::Uploading)?;
                self.upload(&a, out.payload)
            }
            Supervised::Finished(Err(SandboxError::Cancelled)) | Supervised::Stopped => Err(Outcome::Stopped),
            Supervised::Finished(Err(e)) => {
                log::warn!("{} failed locally: {e}", a.task_id);
                self.report_failure(&a.task_id, &e.to_string())?;
                self.clear().map(|_| None)
            }
            Supervised::Told(Directive::Stop) => {
                log::info!("coordinator stopped {}", a.task_id);
                self.stats.stops_obeyed += 1;
                self.clear().map(|_| None)
            }
            Supervised::Told(Directive::Continue) => unreachable!("continue keeps supervising"),
            Supervised::Failed(e) => Err(Outcome::Done(e)),
        }
    }

    /// Emits Alive every period while the compute runs.
    fn supervise(
        &mut self,
        a: &HeldAssignment,
        rx: &mpsc::Receiver<Result<SandboxOutput, SandboxError>>,
        cancel: &CancelToken,
        period: Duration,
    ) -> Supervised {
        let mut backoff = Backoff::new(period);
        let mut next_alive = Instant::now() + period;
        let tick = (period / 4).clamp(Duration::from_millis(5), Duration::from_millis(100));
        loop {
            match rx.recv_timeout(tick) {
                Ok(r) => return Supervised::Finished(r),
                Err(mpsc::RecvTimeoutError::Disconnected) => {
                    return Supervised::Finished(Err(SandboxError::Setup("executor thread died".into())))
                }
                Err(mpsc::RecvTimeoutError::Timeout) => {}
            }
            if self.stop.is_stopped() {
                cancel.cancel();
                let _ = rx.recv();
                return Supervised::Stopped;
            }
            if Instant::now() < next_alive {
                continue;
            }
            match self.alive(&a.task_id) {
                Ok(Directive::Continue) => {
                    backoff.reset();
                    next_alive = Instant::now() + period;
                    if self.state.phase == Phase::OfflineComputing {
                        log::info!("coordinator reachable again");
                        if let Err(Outcome::Done(e)) = self.persist(Phase::Computing) {
                            cancel.cancel();
                            let _ = rx.recv();
                            return Supervised::Failed(e);
                        }
                    }
                }
                Ok(Directive::Stop) => {
                    cancel.cancel();
                    let _ = rx.recv();
                    return Supervised::Told(Directive::Stop);
                }
                Err(Outcome::Offline(e)) => {
                    if self.state.phase != Phase::OfflineComputing {
                        log::info!("alive failed ({e}); computing on offline");
                        self.stats.offline_episodes += 1;
                        self.state = offline_continue(self.state.clone());
                        if let Err(Outcome::Done(e)) = self.persist(Phase::OfflineComputing) {
                            cancel.cancel();
                            let _ = rx.recv();
                            return Supervised::Failed(e);
                        }
                    }
                    next_alive = Instant::now() + backoff.next_delay();
                }
                Err(Outcome::Stopped) => {}
                Err(Outcome::Done(e)) => {
                    log::warn!("alive failed: {e}");
                    next_alive = Instant::now() + period;
                }
            }
        }
    }

    fn alive(&mut self, task_id: &str) -> Result<Directive, Outcome<RpcError>> {
        let worker = self.state.worker_id.clone();
        let txid = self.rpc.next_txid();
        match self.call(&txid, |token| Body::Alive {
            token,
            worker: worker.clone(),
            task: task_id.to_string(),
        })? {
            Body::AliveDirective { directive, .. } => Ok(directive),
            other => Err(Outcome::Done(RpcError::Unexpected {
                request: xw_protocol::Kind::Alive,
                got: other.kind(),
            })),
        }
    }

    /// Sends the result, retrying through outages under one txid.
    fn upload(&mut self, a: &HeldAssignment, payload: Vec<u8>) -> Result<Option<Duration>, Outcome<AgentError>> {
        let worker = self.state.worker_id.clone();
        let txid = self.rpc.next_txid();
        let payload = xw_protocol::Blob(payload);
        let mut backoff = Backoff::new(self.cfg.alive_period());
        loop {
            let r = self.call(&txid, |token| Body::UploadResult {
                token,
                worker: worker.clone(),
                task: a.task_id.clone(),
                payload: payload.clone(),
            });
            match r {
                Ok(Body::ResultAck { .. }) => {
                    log::info!("{} accepted", a.task_id);
                    self.stats.results_accepted += 1;
                    return self.clear().map(|_| None);
                }
                Ok(Body::ResultReject { reason, .. }) => {
                    log::info!("{} rejected ({reason:?}); discarding", a.task_id);
                    self.stats.results_rejected += 1;
                    return self.clear().map(|_| None);
                }
                Ok(other) => log::warn!("unexpected reply to upload: {:?}", other.kind()),
                Err(Outcome::Offline(e)) => log::debug!("upload of {} deferred: {e}", a.task_id),
                Err(Outcome::Stopped) => return Err(Outcome::Stopped),
                Err(Outcome::Done(RpcError::Remote {
                    code: ErrorCode::PayloadTooLarge,
                    message,
                    ..
                })) => {
                    self.report_failure(&a.task_id, &message)?;
                    return self.clear().map(|_| None);
                }
                Err(Outcome::Done(e)) => log::warn!("upload of {} failed: {e}", a.task_id),
            }
            if self.stop.sleep(backoff.next_delay()) {
                return Err(Outcome::Stopped);
            }
        }
    }

    fn report_failure(&mut self, task_id: &str, reason: &str) -> Result<(), Outcome<AgentError>> {
        let worker = self.state.worker_id.clone();
        let txid = self.rpc.next_txid();
        let mut backoff = Backoff::new(self.cfg.alive_period());
        loop {
            let r = self.call(&txid, |token| Body::ReportFailure {
                token,
                worker: worker.clone(),
                task: task_id.to_string(),
                reason: reason.to_string(),
            });
            match r {
                Ok(_) => {
                    self.stats.failures_reported += 1;
                    return Ok(());
                }
                Err(Outcome::Done(e)) => {
                    // The sweeper will reclaim the task anyway.
                    log::warn!("failure report for {task_id} refused: {e}");
                    return Ok(());
                }
                Err(Outcome::Offline(_)) => {}
                Err(Outcome::Stopped) => return Err(Outcome::Stopped),
            }
            if self.stop.sleep(backoff.next_delay()) {
                return Err(Outcome::Stopped);
            }
        }
    }

    /// Returns the application payload, from the local cache or downloaded;
    /// `None` when two downloads in a row fail verification.
    fn obtain_app(&mut self, a: &HeldAssignment) -> Result<Option<Vec<u8>>, Outcome<AgentError>> {
        let cache = self.cfg.state_dir.join("apps").join(a.app_digest.to_hex());
        if let Ok(bytes) = std::fs::read(&cache) {
            if digest(&bytes) == a.app_digest {
                return Ok(Some(bytes));
            }
            let _ = std::fs::remove_file(&cache);
        }
        let mut backoff = Backoff::new(self.cfg.alive_period());
        let mut mismatches = 0;
        loop {
            let txid = self.rpc.next_txid();
            let app_ref = a.app_ref.clone();
            match self.call(&txid, |token| Body::DownloadApp {
                token,
                app_ref: app_ref.clone(),
            }) {
                Ok(Body::AppPayload { payload, .. }) => {
                    if digest(payload.as_slice()) == a.app_digest {
                        if let Some(dir) = cache.parent() {
                            let _ = std::fs::create_dir_all(dir);
                        }
                        let _ = std::fs::write(&cache, payload.as_slice());
                        return Ok(Some(payload.into_vec()));
                    }
                    mismatches += 1;
                    log::warn!("{} payload digest mismatch ({mismatches})", a.app_ref);
                    if mismatches >= 2 {
                        return Ok(None);
                    }
                    continue;
                }
                Ok(other) => log::warn!("unexpected reply to download: {:?}", other.kind()),
                Err(Outcome::Done(e)) => {
                    log::warn!("download of {} failed: {e}", a.app_ref);
                    return Ok(None);
                }
                Err(Outcome::Offline(_)) => {}
                Err(Outcome::Stopped) => return Err(Outcome::Stopped),
            }
            if self.stop.sleep(backoff.next_delay()) {
                return Err(Outcome::Stopped);
            }
        }
    }
}

enum Supervised {
    Finished(Result<SandboxOutput, SandboxError>),
    Told(Directive),
    Stopped,
    Failed(AgentError),
}
