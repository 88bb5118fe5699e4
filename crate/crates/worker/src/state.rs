//! Worker state persisted on local disk, and the single-instance lock.

use std::fs::{self, File, OpenOptions};
use std::io::{self, Write};
use std::os::fd::AsRawFd;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use xw_common::{digest, Digest};
use xw_protocol::frame::{decode_frame, encode_frame, DEFAULT_MAX_FRAME_BYTES};
use xw_protocol::{AppKind, Blob};

pub const STATE_FILE: &str = "state";
pub const LOCK_FILE: &str = "lock";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Idle,
    Downloading,
    Computing,
    Uploading,
    OfflineComputing,
}

/// The task a worker is responsible for.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeldAssignment {
    pub task_id: String,
    pub app_ref: String,
    pub app_kind: AppKind,
    pub app_digest: Digest,
    pub params: Blob,
    pub params_digest: Digest,
    pub attempt: u32,
}

impl HeldAssignment {
    pub fn new(
        task_id: String,
        app_ref: String,
        app_kind: AppKind,
        app_digest: Digest,
        params: Blob,
        attempt: u32,
    ) -> Self {
        let params_digest = digest(params.as_slice());
        HeldAssignment {
            task_id,
            app_ref,
            app_kind,
            app_digest,
            params,
            params_digest,
            attempt,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkerState {
    pub worker_id: String,
    pub current_assignment: Option<HeldAssignment>,
    pub phase: Phase,
}

impl WorkerState {
    pub fn idle(worker_id: impl Into<String>) -> Self {
        WorkerState {
            worker_id: worker_id.into(),
            current_assignment: None,
            phase: Phase::Idle,
        }
    }

    /// Idle must hold nothing; every other phase must hold something.
    pub fn is_consistent(&self) -> bool {
        (self.phase == Phase::Idle) == self.current_assignment.is_none()
    }
}

#[derive(Debug, thiserror::Error)]
pub enum StateError {
    #[error("state i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("persisted state is unreadable: {0}")]
    CorruptState(String),
    #[error("another worker already runs in {0}")]
    AlreadyRunning(PathBuf),
}

/// Reads and writes `state_dir/state` atomically, framed like wire messages.
#[derive(Debug, Clone)]
pub struct StateStore {
    dir: PathBuf,
}

impl StateStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        StateStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn io(&self, source: io::Error) -> StateError {
        StateError::Io {
            path: self.dir.clone(),
            source,
        }
    }

    /// `Ok(None)` when nothing was ever saved.
    pub fn load(&self) -> Result<Option<WorkerState>, StateError> {
        let bytes = match fs::read(self.dir.join(STATE_FILE)) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(self.io(e)),
        };
        let payload =
            decode_frame(&bytes, DEFAULT_MAX_FRAME_BYTES).map_err(|e| StateError::CorruptState(e.to_string()))?;
        let state: WorkerState =
            serde_json::from_slice(payload).map_err(|e| StateError::CorruptState(e.to_string()))?;
        if !state.is_consistent() {
            return Err(StateError::CorruptState(format!(
                "phase {:?} contradicts assignment",
                state.phase
            )));
        }
        if let Some(a) = &state.current_assignment {
            if digest(a.params.as_slice()) != a.params_digest {
                return Err(StateError::CorruptState("params digest mismatch".into()));
            }
        }
        Ok(Some(state))
    }

    pub fn save(&self, state: &WorkerState) -> Result<(), StateError> {
        assert!(
            state.is_consistent(),
            "refusing to persist {:?} with {:?}",
            state.phase,
            state.current_assignment.as_ref().map(|a| &a.task_id)
        );
        fs::create_dir_all(&self.dir).map_err(|e| self.io(e))?;
        let json = serde_json::to_vec(state).expect("state serializes");
        let tmp = self.dir.join(format!("{STATE_FILE}.tmp"));
        let write = || -> io::Result<()> {
            let mut f = File::create(&tmp)?;
            f.write_all(&encode_frame(&json))?;
            f.sync_all()?;
            fs::rename(&tmp, self.dir.join(STATE_FILE))?;
            File::open(&self.dir)?.sync_all()
        };
        write().map_err(|e| self.io(e))
    }
}

/// Exclusive advisory lock on `state_dir/lock`, released on drop.
#[derive(Debug)]
pub struct StateLock {
    _file: File,
}

impl StateLock {
    pub fn acquire(dir: &Path) -> Result<StateLock, StateError> {
        let io = |source| StateError::Io {
            path: dir.to_path_buf(),
            source,
        };
        fs::create_dir_all(dir).map_err(io)?;
        let file = OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(dir.join(LOCK_FILE))
            .map_err(io)?;
        // SAFETY: flock on a descriptor we own.
        if unsafe { libc::flock(file.as_raw_fd(), libc::LOCK_EX | libc::LOCK_NB) } != 0 {
            let e = io::Error::last_os_error();
            if e.raw_os_error() == Some(libc::EWOULDBLOCK) {
                return Err(StateError::AlreadyRunning(dir.to_path_buf()));
            }
            return Err(io(e));
        }
        Ok(StateLock { _file: file })
    }
}
