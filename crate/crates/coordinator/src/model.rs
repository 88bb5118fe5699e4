//! Records owned by the coordinator.

use std::time::Duration;

use serde::{Deserialize, Serialize};
use xw_common::{Digest, Timestamp};
use xw_protocol::{AppKind, Blob, PlatformRequirements, Retention, Role, TaskStatus, WorkerCapabilities};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskDescriptor {
    pub task_id: String,
    pub owner: String,
    /// Client-chosen idempotency key, unique per owner.
    pub label: String,
    pub app_ref: String,
    pub params: Blob,
    pub requirements: PlatformRequirements,
    pub retention: Retention,
    pub status: TaskStatus,
    /// Set iff `status == Scheduled`.
    pub assigned_worker: Option<String>,
    /// The worker that last held the task.
    pub last_worker: Option<String>,
    /// 1-based attempt number; bumped on every reschedule.
    pub attempt: u32,
    pub submitted_at: Timestamp,
    /// Admission index; the FIFO key.
    pub sequence_no: u64,
    /// Transaction id of the RequestWork that produced the current assignment.
    pub assign_txid: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRecord {
    pub task_id: String,
    /// `None` once erased by fetch or session end.
    pub payload: Option<Blob>,
    pub produced_by: String,
    pub received_at: Timestamp,
    pub retention: Retention,
    pub fetched: bool,
    pub upload_txid: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AclEntry {
    pub password_digest: Digest,
    pub role: Role,
    pub revoked: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AppRecord {
    pub app_ref: String,
    pub kind: AppKind,
    pub digest: Digest,
    pub payload: Blob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WorkerState {
    Connected,
    /// Silent past the alive timeout but not yet swept.
    Suspect,
    Disconnected,
}

/// Volatile view of a worker; rebuilt from traffic, never journaled.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerRecord {
    pub worker_id: String,
    pub capabilities: WorkerCapabilities,
    pub last_alive: Timestamp,
    pub current_task: Option<String>,
    pub state: WorkerState,
}

impl WorkerRecord {
    pub fn new(worker_id: &str, capabilities: WorkerCapabilities, now: Timestamp) -> Self {
        WorkerRecord {
            worker_id: worker_id.to_string(),
            capabilities,
            last_alive: now,
            current_task: None,
            state: WorkerState::Connected,
        }
    }

    pub fn state_at(&self, now: Timestamp, alive_timeout: Duration) -> WorkerState {
        match self.state {
            WorkerState::Disconnected => WorkerState::Disconnected,
            _ if now.since(self.last_alive) <= alive_timeout => WorkerState::Connected,
            _ => WorkerState::Suspect,
        }
    }

    pub fn touch(&mut self, now: Timestamp) {
        self.last_alive = self.last_alive.max(now);
        self.state = WorkerState::Connected;
    }
}
