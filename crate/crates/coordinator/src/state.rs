//! The durable part of the coordinator: everything derivable from the
//! journal. Live mutations and recovery both go through [`CoordinatorState::apply`].

use std::collections::BTreeMap;

use serde::Serialize;
use xw_common::{digest, Digest};
use xw_protocol::{Retention, TaskStatus};

use crate::journal::JournalEvent;
use crate::model::{AclEntry, AppRecord, ResultRecord, TaskDescriptor};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
#[error("event does not apply to current state: {0}")]
pub struct ApplyError(pub String);

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct CoordinatorState {
    tasks: BTreeMap<String, TaskDescriptor>,
    results: BTreeMap<String, ResultRecord>,
    acl: BTreeMap<String, AclEntry>,
    apps: BTreeMap<String, AppRecord>,
    next_sequence: u64,
    #[serde(skip)]
    pending: BTreeMap<u64, String>,
    #[serde(skip)]
    by_label: BTreeMap<(String, String), String>,
    #[serde(skip)]
    by_sequence: BTreeMap<u64, String>,
}

impl CoordinatorState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn task(&self, task_id: &str) -> Option<&TaskDescriptor> {
        self.tasks.get(task_id)
    }

    pub fn tasks(&self) -> impl Iterator<Item = &TaskDescriptor> {
        self.by_sequence.values().map(|id| &self.tasks[id])
    }

    pub fn task_count(&self) -> usize {
        self.tasks.len()
    }

    pub fn task_by_label(&self, owner: &str, label: &str) -> Option<&TaskDescriptor> {
        self.by_label
            .get(&(owner.to_string(), label.to_string()))
            .map(|id| &self.tasks[id])
    }

    /// Pending tasks in FIFO order.
    pub fn pending(&self) -> impl Iterator<Item = &TaskDescriptor> {
        self.pending.values().map(|id| &self.tasks[id])
    }

    pub fn scheduled_to<'a>(&'a self, worker_id: &'a str) -> impl Iterator<Item = &'a TaskDescriptor> + 'a {
        self.tasks()
            .filter(move |t| t.status == TaskStatus::Scheduled && t.assigned_worker.as_deref() == Some(worker_id))
    }

    pub fn count_status(&self, status: TaskStatus) -> usize {
        self.tasks.values().filter(|t| t.status == status).count()
    }

    pub fn result(&self, task_id: &str) -> Option<&ResultRecord> {
        self.results.get(task_id)
    }

    pub fn results(&self) -> impl Iterator<Item = &ResultRecord> {
        self.results.values()
    }

    pub fn user(&self, login: &str) -> Option<&AclEntry> {
        self.acl.get(login)
    }

    pub fn app(&self, app_ref: &str) -> Option<&AppRecord> {
        self.apps.get(app_ref)
    }

    pub fn next_sequence(&self) -> u64 {
        self.next_sequence
    }

    /// SHA-256 over a canonical serialization of the durable state.
    pub fn state_hash(&self) -> Digest {
        digest(&serde_json::to_vec(self).expect("state serializes"))
    }

    pub fn apply(&mut self, event: &JournalEvent) -> Result<(), ApplyError> {
        match event {
            JournalEvent::UserAdded {
                login,
                password_digest,
                role,
            } => {
                self.acl.insert(
                    login.clone(),
                    AclEntry {
                        password_digest: *password_digest,
                        role: *role,
                        revoked: false,
                    },
                );
            }
            JournalEvent::UserRevoked { login } => {
                let entry = self
                    .acl
                    .get_mut(login)
                    .ok_or_else(|| ApplyError(format!("revoke of unknown user {login}")))?;
                entry.revoked = true;
            }
            JournalEvent::AppRegistered {
                app_ref,
                kind,
                digest,
                payload,
            } => {
                if self.apps.contains_key(app_ref) {
                    return Err(ApplyError(format!("app {app_ref} registered twice")));
                }
                self.apps.insert(
                    app_ref.clone(),
                    AppRecord {
                        app_ref: app_ref.clone(),
                        kind: *kind,
                        digest: *digest,
                        payload: payload.clone(),
                    },
                );
            }
            JournalEvent::TaskSubmitted {
                task_id,
                owner,
                label,
                app_ref,
                params,
                requirements,
                retention,
                submitted_at,
                sequence_no,
            } => {
                if self.tasks.contains_key(task_id) {
                    return Err(ApplyError(format!("task {task_id} submitted twice")));
                }
                if *sequence_no < self.next_sequence {
                    return Err(ApplyError(format!("sequence {sequence_no} not increasing")));
                }
                let key = (owner.clone(), label.clone());
                if self.by_label.contains_key(&key) {
                    return Err(ApplyError(format!("duplicate label {label} for {owner}")));
                }
                self.tasks.insert(
                    task_id.clone(),
                    TaskDescriptor {
                        task_id: task_id.clone(),
                        owner: owner.clone(),
                        label: label.clone(),
                        app_ref: app_ref.clone(),
                        params: params.clone(),
                        requirements: requirements.clone(),
                        retention: *retention,
                        status: TaskStatus::Pending,
                        assigned_worker: None,
                        last_worker: None,
                        attempt: 1,
                        submitted_at: *submitted_at,
                        sequence_no: *sequence_no,
                        assign_txid: None,
                    },
                );
                self.next_sequence = sequence_no + 1;
                self.pending.insert(*sequence_no, task_id.clone());
                self.by_sequence.insert(*sequence_no, task_id.clone());
                self.by_label.insert(key, task_id.clone());
            }
            JournalEvent::TaskScheduled {
                task_id,
                worker_id,
                txid,
                ..
            } => {
                let t = self.task_mut(task_id)?;
                if t.status != TaskStatus::Pending {
                    return Err(ApplyError(format!("schedule of non-pending {task_id}")));
                }
                t.status = TaskStatus::Scheduled;
                t.assigned_worker = Some(worker_id.clone());
                t.last_worker = Some(worker_id.clone());
                t.assign_txid = Some(txid.clone());
                let seq = t.sequence_no;
                self.pending.remove(&seq);
            }
            JournalEvent::TaskRescheduled { task_id, attempt } => {
                let t = self.task_mut(task_id)?;
                if t.status != TaskStatus::Scheduled {
                    return Err(ApplyError(format!("reschedule of unscheduled {task_id}")));
                }
                t.status = TaskStatus::Pending;
                t.assigned_worker = None;
                t.assign_txid = None;
                t.attempt = *attempt;
                let seq = t.sequence_no;
                self.pending.insert(seq, task_id.clone());
            }
            JournalEvent::TaskAborted { task_id, .. } => {
                let t = self.task_mut(task_id)?;
                if t.status.is_terminal() {
                    return Err(ApplyError(format!("abort of finished {task_id}")));
                }
                t.status = TaskStatus::Aborted;
                t.assigned_worker = None;
                t.assign_txid = None;
                let seq = t.sequence_no;
                self.pending.remove(&seq);
            }
            JournalEvent::ResultStored {
                task_id,
                worker_id,
                payload,
                received_at,
                txid,
            } => {
                if self.results.contains_key(task_id) {
                    return Err(ApplyError(format!("second result for {task_id}")));
                }
                let t = self.task_mut(task_id)?;
                if t.status != TaskStatus::Scheduled || t.assigned_worker.as_deref() != Some(worker_id) {
                    return Err(ApplyError(format!(
                        "result for {task_id} from non-assignee {worker_id}"
                    )));
                }
                t.status = TaskStatus::Completed;
                t.assigned_worker = None;
                let retention = t.retention;
                self.results.insert(
                    task_id.clone(),
                    ResultRecord {
                        task_id: task_id.clone(),
                        payload: Some(payload.clone()),
                        produced_by: worker_id.clone(),
                        received_at: *received_at,
                        retention,
                        fetched: false,
                        upload_txid: txid.clone(),
                    },
                );
            }
            JournalEvent::ResultFetched { task_id } => {
                let r = self
                    .results
                    .get_mut(task_id)
                    .ok_or_else(|| ApplyError(format!("fetch of missing result {task_id}")))?;
                r.fetched = true;
                if r.retention == Retention::DiscardOnFetch {
                    r.payload = None;
                }
            }
            JournalEvent::ResultDiscarded { task_id } => {
                let r = self
                    .results
                    .get_mut(task_id)
                    .ok_or_else(|| ApplyError(format!("discard of missing result {task_id}")))?;
                r.payload = None;
            }
        }
        Ok(())
    }

    fn task_mut(&mut self, task_id: &str) -> Result<&mut TaskDescriptor, ApplyError> {
        self.tasks
            .get_mut(task_id)
            .ok_or_else(|| ApplyError(format!("unknown task {task_id}")))
    }
}
