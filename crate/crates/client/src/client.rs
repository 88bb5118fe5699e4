//! Session handling and the transactional client operations.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::time::{Duration, Instant};

use xw_protocol::{
    open_session, AppKind, Blob, Body, CoordinatorFingerprint, Credential, ErrorCode, PlatformRequirements, Retention,
    Role, Rpc, RpcError, SessionError, TaskStatus, TaskSummary, Transport,
};

/// A set of runs of one application, each identified by its label.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub app_ref: String,
    pub items: Vec<(String, Vec<u8>)>,
    pub retention: Retention,
    pub requirements: PlatformRequirements,
}

impl BatchSpec {
    pub fn new(app_ref: impl Into<String>, retention: Retention) -> Self {
        BatchSpec {
            app_ref: app_ref.into(),
            items: Vec::new(),
            retention,
            requirements: PlatformRequirements::any_native(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, params: impl Into<Vec<u8>>) {
        self.items.push((label.into(), params.into()));
    }

    /// First label that occurs more than once.
    pub fn duplicate_label(&self) -> Option<&str> {
        let mut seen = HashSet::new();
        self.items.iter().map(|(l, _)| l.as_str()).find(|l| !seen.insert(*l))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TaskOutcome {
    Completed(Vec<u8>),
    Aborted,
}

#[derive(Debug, thiserror::Error)]
pub enum ClientError {
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error(transparent)]
    Rpc(#[from] RpcError),
    #[error("label {0:?} appears twice in the batch")]
    DuplicateLabel(String),
    #[error("task {0} is not among the caller's tasks")]
    UnknownTask(String),
    #[error("deadline passed with {} of {total} tasks finished", partial.len())]
    DeadlineExceeded {
        partial: BTreeMap<String, TaskOutcome>,
        total: usize,
    },
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl ClientError {
    pub fn is_unreachable(&self) -> bool {
        match self {
            ClientError::Session(SessionError::Unreachable(_)) => true,
            ClientError::Rpc(e) => e.is_unreachable(),
            _ => false,
        }
    }
}

pub type Result<T, E = ClientError> = std::result::Result<T, E>;

/// A client session with one coordinator. The session is opened on first
/// use and reopened once if the coordinator stops accepting the token.
pub struct Client<T> {
    rpc: Rpc<T>,
    fingerprint: CoordinatorFingerprint,
    credential: Credential,
    token: Option<String>,
}

impl<T: Transport> Client<T> {
    pub fn new(transport: T, fingerprint: CoordinatorFingerprint, login: &str, password: &str) -> Self {
        Client {
            rpc: Rpc::new(transport),
            fingerprint,
            credential: Credential::new(login, password, Role::Client),
            token: None,
        }
    }

    pub fn login(&self) -> &str {
        &self.credential.login
    }

    /// Proves the coordinator's identity and logs in, unless already done.
    pub fn connect(&mut self) -> Result<()> {
        if self.token.is_none() {
            let t = open_session(&self.rpc, &self.fingerprint, &self.credential)?;
            self.token = Some(t.token);
        }
        Ok(())
    }

    fn call(&mut self, make: impl Fn(String) -> Body) -> Result<Body> {
        let mut refreshed = false;
        loop {
            self.connect()?;
            let token = self.token.clone().expect("connected");
            match self.rpc.call(make(token)) {
                Err(RpcError::Remote {
                    code: ErrorCode::AuthDenied,
                    ..
                }) if !refreshed => {
                    self.token = None;
                    refreshed = true;
                }
                r => return Ok(r?),
            }
        }
    }

    pub fn list_tasks(&mut self) -> Result<Vec<TaskSummary>> {
        match self.call(|token| Body::ListTasks { token })? {
            Body::TaskList { tasks } => Ok(tasks),
            other => unreachable!("ListTasks answered with {:?}", other.kind()),
        }
    }

    /// Submits one task; returns its id and whether it is new.
    pub fn submit(
        &mut self,
        label: &str,
        app_ref: &str,
        params: &[u8],
        requirements: &PlatformRequirements,
        retention: Retention,
    ) -> Result<(String, bool)> {
        let reply = self.call(|token| Body::SubmitTask {
            token,
            label: label.to_string(),
            app_ref: app_ref.to_string(),
            params: Blob::new(params.to_vec()),
            requirements: requirements.clone(),
            retention,
        })?;
        match reply {
            Body::SubmitAck { task_id, created } => Ok((task_id, created)),
            other => unreachable!("SubmitTask answered with {:?}", other.kind()),
        }
    }

    /// Maps every label of `batch` to a task id. Labels the coordinator
    /// already knows for this owner keep their task; the others are
    /// submitted in item order.
    pub fn submit_batch(&mut self, batch: &BatchSpec) -> Result<BTreeMap<String, String>> {
        if let Some(l) = batch.duplicate_label() {
            return Err(ClientError::DuplicateLabel(l.to_string()));
        }
        let existing: HashMap<String, String> = self.list_tasks()?.into_iter().map(|t| (t.label, t.task_id)).collect();
        let mut ids = BTreeMap::new();
        for (label, params) in &batch.items {
            let id = match existing.get(label) {
                Some(id) => id.clone(),
                None => {
                    let (id, created) =
                        self.submit(label, &batch.app_ref, params, &batch.requirements, batch.retention)?;
                    if !created {
                        log::debug!("label {label} was admitted concurrently as {id}");
                    }
                    id
                }
            };
            ids.insert(label.clone(), id);
        }
        Ok(ids)
    }

    pub fn fetch_result(&mut self, task_id: &str) -> Result<Vec<u8>> {
        let reply = self.call(|token| Body::FetchResult {
            token,
            task_id: task_id.to_string(),
        })?;
        match reply {
            Body::ResultPayload { payload, .. } => Ok(payload.into_vec()),
            other => unreachable!("FetchResult answered with {:?}", other.kind()),
        }
    }

    /// Polls until every task is finished or `deadline` has passed; `None`
    /// waits indefinitely.
    pub fn await_results(
        &mut self,
        task_ids: &[String],
        poll_interval: Duration,
        deadline: Option<Duration>,
    ) -> Result<BTreeMap<String, TaskOutcome>> {
        self.await_results_with(task_ids, poll_interval, deadline, |_, _| Ok(()))
    }

    /// Like [`Client::await_results`], calling `on_done` as each task
    /// finishes, before the next poll.
    pub fn await_results_with(
        &mut self,
        task_ids: &[String],
        poll_interval: Duration,
        deadline: Option<Duration>,
        mut on_done: impl FnMut(&str, &TaskOutcome) -> std::io::Result<()>,
    ) -> Result<BTreeMap<String, TaskOutcome>> {
        let started = Instant::now();
        let mut done = BTreeMap::new();
        let wanted: HashSet<&str> = task_ids.iter().map(String::as_str).collect();
        let mut checked = false;
        loop {
            let statuses: HashMap<String, TaskStatus> = self
                .list_tasks()?
                .into_iter()
                .filter(|t| wanted.contains(t.task_id.as_str()))
                .map(|t| (t.task_id, t.status))
                .collect();
            if !checked {
                if let Some(id) = wanted.iter().find(|id| !statuses.contains_key(**id)) {
                    return Err(ClientError::UnknownTask(id.to_string()));
                }
                checked = true;
            }
            for id in task_ids {
                if done.contains_key(id) {
                    continue;
                }
                let outcome = match statuses[id] {
                    TaskStatus::Completed => match self.fetch_result(id) {
                        Ok(p) => TaskOutcome::Completed(p),
                        Err(ClientError::Rpc(e)) if e.code() == Some(ErrorCode::NotReady) => continue,
                        Err(e) => return Err(e),
                    },
                    TaskStatus::Aborted => TaskOutcome::Aborted,
                    TaskStatus::Pending | TaskStatus::Scheduled => continue,
                };
                on_done(id, &outcome)?;
                done.insert(id.clone(), outcome);
            }
            if done.len() == wanted.len() {
                return Ok(done);
            }
            if let Some(limit) = deadline {
                if started.elapsed() + poll_interval > limit {
                    return Err(ClientError::DeadlineExceeded {
                        partial: done,
                        total: wanted.len(),
                    });
                }
            }
            std::thread::sleep(poll_interval);
        }
    }

    /// Discards every result kept for this owner; returns how many.
    pub fn end_session(&mut self) -> Result<u64> {
        match self.call(|token| Body::EndSession { token })? {
            Body::SessionEnded { discarded } => Ok(discarded),
            other => unreachable!("EndSession answered with {:?}", other.kind()),
        }
    }

    /// Registers an application payload; needs the administrator account.
    pub fn register_app(&mut self, app_ref: &str, kind: AppKind, payload: &[u8]) -> Result<()> {
        self.call(|token| Body::RegisterApp {
            token,
            app_ref: app_ref.to_string(),
            kind,
            payload: Blob::new(payload.to_vec()),
        })?;
        Ok(())
    }
}
