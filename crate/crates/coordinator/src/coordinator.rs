//! Coordinator operations. Every mutation is journaled before it is applied
//! and before the caller sees a reply.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use xw_common::{digest, Clock, Timestamp};
use xw_protocol::{
    password_digest, AppKind, Blob, CoordinatorIdentity, Directive, ErrorCode, PlatformRequirements, RejectReason,
    Retention, Role, SessionToken, TaskStatus, TaskSummary, TokenClaims, WorkerCapabilities,
};

use crate::config::CoordinatorConfig;
use crate::journal::{Journal, JournalError, JournalEvent};
use crate::model::{AppRecord, WorkerRecord, WorkerState};
use crate::state::CoordinatorState;

#[derive(Debug, thiserror::Error)]
pub enum CoordinatorError {
    #[error("authentication denied: {0}")]
    AuthDenied(String),
    #[error("unknown application {0:?}")]
    UnknownApp(String),
    #[error("queue is full ({0} unfinished tasks)")]
    QueueFull(usize),
    #[error("worker already holds {task_id}")]
    WorkerBusy { task_id: String },
    #[error("payload of {size} bytes exceeds {max}")]
    PayloadTooLarge { size: usize, max: usize },
    #[error("task {0} belongs to another user")]
    NotOwner(String),
    #[error("task {0} has no result yet")]
    NotReady(String),
    #[error("result of {0} was already discarded")]
    Gone(String),
    #[error("task {0} was aborted")]
    Aborted(String),
    #[error("application {0:?} already registered")]
    DuplicateApp(String),
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error(transparent)]
    Journal(#[from] JournalError),
    #[error("journal replay failed at seq {seq}: {reason}")]
    CorruptJournal { seq: u64, reason: String },
}

impl CoordinatorError {
    pub fn code(&self) -> ErrorCode {
        match self {
            CoordinatorError::AuthDenied(_) => ErrorCode::AuthDenied,
            CoordinatorError::UnknownApp(_) => ErrorCode::UnknownApp,
            CoordinatorError::QueueFull(_) => ErrorCode::QueueFull,
            CoordinatorError::WorkerBusy { .. } => ErrorCode::WorkerBusy,
            CoordinatorError::PayloadTooLarge { .. } => ErrorCode::PayloadTooLarge,
            CoordinatorError::NotOwner(_) => ErrorCode::NotOwner,
            CoordinatorError::NotReady(_) => ErrorCode::NotReady,
            CoordinatorError::Gone(_) => ErrorCode::Gone,
            CoordinatorError::Aborted(_) => ErrorCode::Aborted,
            CoordinatorError::DuplicateApp(_) => ErrorCode::DuplicateApp,
            CoordinatorError::UnknownTask(_) => ErrorCode::UnknownTask,
            CoordinatorError::BadRequest(_) => ErrorCode::BadRequest,
            CoordinatorError::Journal(_) | CoordinatorError::CorruptJournal { .. } => ErrorCode::Internal,
        }
    }

    /// Task the error refers to, when there is one worth telling the caller.
    pub fn task_id(&self) -> Option<&str> {
        match self {
            CoordinatorError::WorkerBusy { task_id } => Some(task_id),
            _ => None,
        }
    }

    pub fn is_corrupt_journal(&self) -> bool {
        matches!(
            self,
            CoordinatorError::CorruptJournal { .. } | CoordinatorError::Journal(JournalError::Corrupt { .. })
        )
    }
}

pub type Result<T, E = CoordinatorError> = std::result::Result<T, E>;

#[derive(Debug, Clone)]
pub struct Principal {
    pub login: String,
    pub role: Role,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmitRequest {
    pub label: String,
    pub app_ref: String,
    pub params: Vec<u8>,
    pub requirements: PlatformRequirements,
    pub retention: Retention,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub task_id: String,
    pub app_ref: String,
    pub app_kind: AppKind,
    pub app_digest: xw_common::Digest,
    pub params: Blob,
    pub attempt: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UploadOutcome {
    Accepted,
    Rejected(RejectReason),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SweepReport {
    pub disconnected: Vec<String>,
    pub rescheduled: Vec<String>,
    pub aborted: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RecoveryReport {
    pub entries_replayed: usize,
    pub torn_bytes: u64,
    pub scheduled_tasks: usize,
}

pub struct Coordinator {
    config: CoordinatorConfig,
    identity: CoordinatorIdentity,
    clock: Arc<dyn Clock>,
    state: CoordinatorState,
    journal: Journal,
    workers: BTreeMap<String, WorkerRecord>,
    verified: Mutex<HashMap<String, TokenClaims>>,
}

const VERIFIED_TOKENS: usize = 4096;

impl std::fmt::Debug for Coordinator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Coordinator")
            .field("journal", &self.journal.path())
            .field("tasks", &self.state.task_count())
            .field("workers", &self.workers.len())
            .finish()
    }
}

impl Coordinator {
    /// Rebuilds the coordinator from its journal (an absent journal is an
    /// empty one), then seeds any configured users the journal lacks.
    pub fn recover(config: CoordinatorConfig, clock: Arc<dyn Clock>) -> Result<(Coordinator, RecoveryReport)> {
        let (journal, contents) = Journal::open(&config.journal_path, config.sync_journal)?;
        let mut state = CoordinatorState::new();
        for entry in &contents.entries {
            state
                .apply(&entry.event)
                .map_err(|e| CoordinatorError::CorruptJournal {
                    seq: entry.seq,
                    reason: e.0,
                })?;
        }
        let now = clock.now();
        // Holders of scheduled tasks get one full timeout to re-signal.
        let mut workers = BTreeMap::new();
        let mut scheduled = 0;
        for t in state.tasks().filter(|t| t.status == TaskStatus::Scheduled) {
            scheduled += 1;
            let w = t.assigned_worker.clone().expect("scheduled tasks are assigned");
            workers
                .entry(w.clone())
                .or_insert_with(|| WorkerRecord::new(&w, WorkerCapabilities::default(), now))
                .current_task = Some(t.task_id.clone());
        }
        let report = RecoveryReport {
            entries_replayed: contents.entries.len(),
            torn_bytes: contents.torn_bytes,
            scheduled_tasks: scheduled,
        };
        let identity = config.identity();
        let mut coordinator = Coordinator {
            config,
            identity,
            clock,
            state,
            journal,
            workers,
            verified: Mutex::new(HashMap::new()),
        };
        for user in coordinator.config.acl.clone() {
            if coordinator.state.user(&user.login).is_none() {
                coordinator.commit(JournalEvent::UserAdded {
                    login: user.login,
                    password_digest: user.password_digest,
                    role: user.role,
                })?;
            }
        }
        log::info!(
            "coordinator recovered: {} entries, {} tasks ({} scheduled)",
            report.entries_replayed,
            coordinator.state.task_count(),
            scheduled
        );
        Ok((coordinator, report))
    }

    pub fn config(&self) -> &CoordinatorConfig {
        &self.config
    }

    pub fn identity(&self) -> &CoordinatorIdentity {
        &self.identity
    }

    pub fn state(&self) -> &CoordinatorState {
        &self.state
    }

    pub fn state_hash(&self) -> xw_common::Digest {
        self.state.state_hash()
    }

    pub fn workers(&self) -> &BTreeMap<String, WorkerRecord> {
        &self.workers
    }

    pub fn now(&self) -> Timestamp {
        self.clock.now()
    }

    fn commit(&mut self, event: JournalEvent) -> Result<()> {
        let entry = self.journal.append(event)?;
        self.state
            .apply(&entry.event)
            .map_err(|e| CoordinatorError::CorruptJournal {
                seq: entry.seq,
                reason: e.0,
            })
    }

    // ---- authentication -------------------------------------------------

    pub fn challenge(&self, nonce: &[u8]) -> ([u8; 32], Vec<u8>) {
        (self.identity.public_key(), self.identity.sign_challenge(nonce))
    }

    pub fn login(&self, login: &str, password: &str, role: Role) -> Result<SessionToken> {
        let denied = || CoordinatorError::AuthDenied("unknown login, wrong password, or revoked".into());
        let entry = self.state.user(login).ok_or_else(denied)?;
        if entry.revoked || entry.role != role || entry.password_digest != password_digest(login, password) {
            return Err(denied());
        }
        Ok(self
            .identity
            .issue_token(login, role, self.clock.now(), self.config.token_lifetime()))
    }

    pub fn authorize(&self, token: &str, role: Option<Role>) -> Result<Principal> {
        let claims = self.verify_token(token)?;
        match self.state.user(&claims.sub) {
            Some(u) if !u.revoked && u.role == claims.role => {}
            _ => return Err(CoordinatorError::AuthDenied("login revoked".into())),
        }
        if let Some(r) = role {
            if claims.role != r {
                return Err(CoordinatorError::AuthDenied(format!("{r:?} role required")));
            }
        }
        Ok(Principal {
            login: claims.sub,
            role: claims.role,
        })
    }

    fn verify_token(&self, token: &str) -> Result<TokenClaims> {
        let now = self.clock.now();
        let mut verified = self.verified.lock().unwrap_or_else(|p| p.into_inner());
        if let Some(claims) = verified.get(token) {
            if claims.iat <= now && now <= claims.exp {
                return Ok(claims.clone());
            }
        }
        let claims = self
            .identity
            .verify_token(token, now)
            .map_err(|e| CoordinatorError::AuthDenied(e.to_string()))?;
        if verified.len() >= VERIFIED_TOKENS {
            verified.clear();
        }
        verified.insert(token.to_string(), claims.clone());
        Ok(claims)
    }

    fn authorize_admin(&self, token: &str) -> Result<Principal> {
        let p = self.authorize(token, None)?;
        if p.login != self.config.admin_login {
            return Err(CoordinatorError::AuthDenied("admin privilege required".into()));
        }
        Ok(p)
    }

    // ---- client side ----------------------------------------------------

    /// Admits a task, or returns the existing id when `(owner, label)` was
    /// already submitted. The boolean is true for a new task.
    pub fn submit_task(&mut self, token: &str, req: SubmitRequest) -> Result<(String, bool)> {
        let owner = self.authorize(token, Some(Role::Client))?.login;
        if let Some(existing) = self.state.task_by_label(&owner, &req.label) {
            return Ok((existing.task_id.clone(), false));
        }
        if req.label.is_empty() {
            return Err(CoordinatorError::BadRequest("empty label".into()));
        }
        if !req.requirements.is_consistent() {
            return Err(CoordinatorError::BadRequest(
                "managed archives need a managed runtime".into(),
            ));
        }
        let app = self
            .state
            .app(&req.app_ref)
            .ok_or_else(|| CoordinatorError::UnknownApp(req.app_ref.clone()))?;
        if app.kind != req.requirements.app_kind {
            return Err(CoordinatorError::BadRequest(format!(
                "app {} is {:?}, requirements say {:?}",
                req.app_ref, app.kind, req.requirements.app_kind
            )));
        }
        if req.params.len() > self.config.max_payload_bytes {
            return Err(CoordinatorError::PayloadTooLarge {
                size: req.params.len(),
                max: self.config.max_payload_bytes,
            });
        }
        let unfinished = self.state.tasks().filter(|t| !t.status.is_terminal()).count();
        if unfinished >= self.config.queue_limit {
            return Err(CoordinatorError::QueueFull(unfinished));
        }
        let sequence_no = self.state.next_sequence();
        let task_id = format!("task-{sequence_no}");
        self.commit(JournalEvent::TaskSubmitted {
            task_id: task_id.clone(),
            owner,
            label: req.label,
            app_ref: req.app_ref,
            params: Blob(req.params),
            requirements: req.requirements,
            retention: req.retention,
            submitted_at: self.clock.now(),
            sequence_no,
        })?;
        Ok((task_id, true))
    }

    pub fn list_owned_tasks(&self, token: &str) -> Result<Vec<TaskSummary>> {
        let owner = self.authorize(token, Some(Role::Client))?.login;
        Ok(self
            .state
            .tasks()
            .filter(|t| t.owner == owner)
            .map(|t| TaskSummary {
                task_id: t.task_id.clone(),
                label: t.label.clone(),
                status: t.status,
            })
            .collect())
    }

    pub fn fetch_result(&mut self, token: &str, task_id: &str) -> Result<Vec<u8>> {
        let owner = self.authorize(token, Some(Role::Client))?.login;
        let task = self
            .state
            .task(task_id)
            .ok_or_else(|| CoordinatorError::UnknownTask(task_id.to_string()))?;
        if task.owner != owner {
            return Err(CoordinatorError::NotOwner(task_id.to_string()));
        }
        match task.status {
            TaskStatus::Completed => {}
            TaskStatus::Aborted => return Err(CoordinatorError::Aborted(task_id.to_string())),
            _ => return Err(CoordinatorError::NotReady(task_id.to_string())),
        }
        let record = self.state.result(task_id).expect("completed tasks have results");
        let payload = record
            .payload
            .clone()
            .ok_or_else(|| CoordinatorError::Gone(task_id.to_string()))?;
        if record.retention == Retention::DiscardOnFetch || !record.fetched {
            self.commit(JournalEvent::ResultFetched {
                task_id: task_id.to_string(),
            })?;
        }
        Ok(payload.into_vec())
    }

    /// Erases every kept result of the caller; returns how many.
    pub fn end_session(&mut self, token: &str) -> Result<u64> {
        let owner = self.authorize(token, Some(Role::Client))?.login;
        let doomed: Vec<String> = self
            .state
            .tasks()
            .filter(|t| t.owner == owner)
            .filter_map(|t| self.state.result(&t.task_id))
            .filter(|r| r.retention == Retention::KeepUntilSessionEnd && r.payload.is_some())
            .map(|r| r.task_id.clone())
            .collect();
        for task_id in &doomed {
            self.commit(JournalEvent::ResultDiscarded {
                task_id: task_id.clone(),
            })?;
        }
        Ok(doomed.len() as u64)
    }

    // ---- worker side ----------------------------------------------------

    /// Hands the oldest matching pending task to `worker_id`.
    ///
    /// A worker that still holds an assignment gets `WorkerBusy`, unless
    /// `txid` is the very request that produced that assignment, in which
    /// case the same assignment is returned again.
    pub fn request_work(
        &mut self,
        token: &str,
        worker_id: &str,
        capabilities: &WorkerCapabilities,
        txid: &str,
    ) -> Result<Option<Assignment>> {
        self.authorize(token, Some(Role::Worker))?;
        let now = self.clock.now();
        let worker = self
            .workers
            .entry(worker_id.to_string())
            .or_insert_with(|| WorkerRecord::new(worker_id, capabilities.clone(), now));
        worker.capabilities = capabilities.clone();
        worker.touch(now);
        if let Some(held) = self.state.scheduled_to(worker_id).next() {
            if held.assign_txid.as_deref() == Some(txid) {
                return Ok(Some(self.assignment_for(&held.task_id)));
            }
            return Err(CoordinatorError::WorkerBusy {
                task_id: held.task_id.clone(),
            });
        }
        let Some(task_id) = self
            .state
            .pending()
            .find(|t| t.requirements.satisfied_by(capabilities))
            .map(|t| t.task_id.clone())
        else {
            return Ok(None);
        };
        self.commit(JournalEvent::TaskScheduled {
            task_id: task_id.clone(),
            worker_id: worker_id.to_string(),
            at: now,
            txid: txid.to_string(),
        })?;
        if let Some(w) = self.workers.get_mut(worker_id) {
            w.current_task = Some(task_id.clone());
        }
        Ok(Some(self.assignment_for(&task_id)))
    }

    fn assignment_for(&self, task_id: &str) -> Assignment {
        let t = self.state.task(task_id).expect("task exists");
        let app = self.state.app(&t.app_ref).expect("apps are never removed");
        Assignment {
            task_id: t.task_id.clone(),
            app_ref: t.app_ref.clone(),
            app_kind: app.kind,
            app_digest: app.digest,
            params: t.params.clone(),
            attempt: t.attempt,
        }
    }

    /// Refreshes liveness; `Stop` when `task_id` is no longer this worker's.
    pub fn report_alive(&mut self, token: &str, worker_id: &str, task_id: &str) -> Result<Directive> {
        self.authorize(token, Some(Role::Worker))?;
        let now = self.clock.now();
        let still_assigned = self
            .state
            .task(task_id)
            .is_some_and(|t| t.status == TaskStatus::Scheduled && t.assigned_worker.as_deref() == Some(worker_id));
        let worker = self
            .workers
            .entry(worker_id.to_string())
            .or_insert_with(|| WorkerRecord::new(worker_id, WorkerCapabilities::default(), now));
        worker.touch(now);
        if still_assigned {
            worker.current_task = Some(task_id.to_string());
            Ok(Directive::Continue)
        } else {
            if worker.current_task.as_deref() == Some(task_id) {
                worker.current_task = None;
            }
            Ok(Directive::Stop)
        }
    }

    /// First writer wins: only the current assignee of a task without a
    /// result may store one.
    pub fn upload_result(
        &mut self,
        token: &str,
        worker_id: &str,
        task_id: &str,
        payload: Vec<u8>,
        txid: &str,
    ) -> Result<UploadOutcome> {
        self.authorize(token, Some(Role::Worker))?;
        if payload.len() > self.config.max_payload_bytes {
            return Err(CoordinatorError::PayloadTooLarge {
                size: payload.len(),
                max: self.config.max_payload_bytes,
            });
        }
        let now = self.clock.now();
        if let Some(w) = self.workers.get_mut(worker_id) {
            w.touch(now);
        }
        let Some(task) = self.state.task(task_id) else {
            return Ok(UploadOutcome::Rejected(RejectReason::UnknownTask));
        };
        if let Some(existing) = self.state.result(task_id) {
            if existing.upload_txid == txid && existing.produced_by == worker_id {
                return Ok(UploadOutcome::Accepted);
            }
            return Ok(UploadOutcome::Rejected(RejectReason::AlreadyCompleted));
        }
        match task.status {
            TaskStatus::Aborted => return Ok(UploadOutcome::Rejected(RejectReason::TaskAborted)),
            TaskStatus::Scheduled if task.assigned_worker.as_deref() == Some(worker_id) => {}
            _ => return Ok(UploadOutcome::Rejected(RejectReason::NotAssignee)),
        }
        self.commit(JournalEvent::ResultStored {
            task_id: task_id.to_string(),
            worker_id: worker_id.to_string(),
            payload: Blob(payload),
            received_at: now,
            txid: txid.to_string(),
        })?;
        if let Some(w) = self.workers.get_mut(worker_id) {
            w.current_task = None;
        }
        Ok(UploadOutcome::Accepted)
    }

    /// A worker gave up on its task (sandbox limit, crash, bad payload).
    /// The task goes back to the queue, or is aborted if out of attempts.
    pub fn report_failure(&mut self, token: &str, worker_id: &str, task_id: &str, reason: &str) -> Result<TaskStatus> {
        self.authorize(token, Some(Role::Worker))?;
        let now = self.clock.now();
        if let Some(w) = self.workers.get_mut(worker_id) {
            w.touch(now);
            if w.current_task.as_deref() == Some(task_id) {
                w.current_task = None;
            }
        }
        let task = self
            .state
            .task(task_id)
            .ok_or_else(|| CoordinatorError::UnknownTask(task_id.to_string()))?;
        if task.status != TaskStatus::Scheduled || task.assigned_worker.as_deref() != Some(worker_id) {
            return Ok(task.status);
        }
        log::info!("{worker_id} failed {task_id} (attempt {}): {reason}", task.attempt);
        self.release(task_id, &format!("worker failure: {reason}"))?;
        Ok(self.state.task(task_id).expect("task exists").status)
    }

    fn release(&mut self, task_id: &str, reason: &str) -> Result<bool> {
        let attempt = self.state.task(task_id).expect("task exists").attempt;
        if attempt >= self.config.max_attempts {
            self.commit(JournalEvent::TaskAborted {
                task_id: task_id.to_string(),
                reason: reason.to_string(),
            })?;
            Ok(false)
        } else {
            self.commit(JournalEvent::TaskRescheduled {
                task_id: task_id.to_string(),
                attempt: attempt + 1,
            })?;
            Ok(true)
        }
    }

    /// Disconnects workers silent for longer than the alive timeout and
    /// requeues (or aborts) their tasks.
    pub fn sweep_liveness(&mut self, now: Timestamp) -> Result<SweepReport> {
        let timeout = self.config.alive_timeout();
        let mut report = SweepReport::default();
        let silent: Vec<String> = self
            .workers
            .values()
            .filter(|w| w.state != WorkerState::Disconnected && now.since(w.last_alive) > timeout)
            .map(|w| w.worker_id.clone())
            .collect();
        for worker_id in silent {
            let held: Vec<String> = self.state.scheduled_to(&worker_id).map(|t| t.task_id.clone()).collect();
            for task_id in held {
                if self.release(&task_id, "alive timeout")? {
                    report.rescheduled.push(task_id);
                } else {
                    report.aborted.push(task_id);
                }
            }
            let w = self.workers.get_mut(&worker_id).expect("listed above");
            w.state = WorkerState::Disconnected;
            w.current_task = None;
            log::info!("worker {worker_id} disconnected (silent since {})", w.last_alive);
            report.disconnected.push(worker_id);
        }
        Ok(report)
    }

    // ---- administration -------------------------------------------------

    pub fn register_app(&mut self, token: &str, app_ref: &str, kind: AppKind, payload: Vec<u8>) -> Result<()> {
        self.authorize_admin(token)?;
        if app_ref.is_empty() {
            return Err(CoordinatorError::BadRequest("empty app_ref".into()));
        }
        if self.state.app(app_ref).is_some() {
            return Err(CoordinatorError::DuplicateApp(app_ref.to_string()));
        }
        if payload.len() > self.config.max_payload_bytes {
            return Err(CoordinatorError::PayloadTooLarge {
                size: payload.len(),
                max: self.config.max_payload_bytes,
            });
        }
        self.commit(JournalEvent::AppRegistered {
            app_ref: app_ref.to_string(),
            kind,
            digest: digest(&payload),
            payload: Blob(payload),
        })
    }

    pub fn download_app(&self, token: &str, app_ref: &str) -> Result<AppRecord> {
        self.authorize(token, None)?;
        self.state
            .app(app_ref)
            .cloned()
            .ok_or_else(|| CoordinatorError::UnknownApp(app_ref.to_string()))
    }

    pub fn add_user(&mut self, token: &str, login: &str, digest: xw_common::Digest, role: Role) -> Result<()> {
        self.authorize_admin(token)?;
        if login.is_empty() {
            return Err(CoordinatorError::BadRequest("empty login".into()));
        }
        if self.state.user(login).is_some_and(|u| !u.revoked) {
            return Err(CoordinatorError::BadRequest(format!("user {login} exists")));
        }
        self.commit(JournalEvent::UserAdded {
            login: login.to_string(),
            password_digest: digest,
            role,
        })
    }

    pub fn revoke_user(&mut self, token: &str, login: &str) -> Result<()> {
        self.authorize_admin(token)?;
        match self.state.user(login) {
            None => Err(CoordinatorError::BadRequest(format!("unknown user {login}"))),
            Some(u) if u.revoked => Ok(()),
            Some(_) => self.commit(JournalEvent::UserRevoked {
                login: login.to_string(),
            }),
        }
    }
}
