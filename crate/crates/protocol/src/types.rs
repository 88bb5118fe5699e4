//! Plain data carried inside messages.

use std::fmt;

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Opaque bytes, carried on the wire as a base64 string.
#[derive(Clone, Default, PartialEq, Eq, Hash)]
pub struct Blob(pub Vec<u8>);

impl Blob {
    pub fn new(bytes: impl Into<Vec<u8>>) -> Self {
        Blob(bytes.into())
    }

    pub fn as_slice(&self) -> &[u8] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<u8> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

impl fmt::Debug for Blob {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.0.len() <= 32 {
            write!(f, "Blob({})", hex::encode(&self.0))
        } else {
            write!(f, "Blob({} bytes)", self.0.len())
        }
    }
}

impl From<Vec<u8>> for Blob {
    fn from(v: Vec<u8>) -> Self {
        Blob(v)
    }
}

impl From<&[u8]> for Blob {
    fn from(v: &[u8]) -> Self {
        Blob(v.to_vec())
    }
}

impl Serialize for Blob {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&STANDARD.encode(&self.0))
    }
}

impl<'de> Deserialize<'de> for Blob {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        STANDARD
            .decode(s.as_bytes())
            .map(Blob)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Role {
    Client,
    Worker,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AppKind {
    NativeBinary,
    ManagedArchive,
}

/// Wildcard accepted in `cpu_arch` / `os` requirements.
pub const ANY_PLATFORM: &str = "*";

/// What a task needs from the host that runs it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PlatformRequirements {
    pub cpu_arch: String,
    pub os: String,
    pub needs_managed_runtime: bool,
    pub app_kind: AppKind,
}

impl PlatformRequirements {
    pub fn native(cpu_arch: impl Into<String>, os: impl Into<String>) -> Self {
        PlatformRequirements {
            cpu_arch: cpu_arch.into(),
            os: os.into(),
            needs_managed_runtime: false,
            app_kind: AppKind::NativeBinary,
        }
    }

    pub fn managed() -> Self {
        PlatformRequirements {
            cpu_arch: ANY_PLATFORM.into(),
            os: ANY_PLATFORM.into(),
            needs_managed_runtime: true,
            app_kind: AppKind::ManagedArchive,
        }
    }

    /// Runs anywhere a native binary can.
    pub fn any_native() -> Self {
        Self::native(ANY_PLATFORM, ANY_PLATFORM)
    }

    pub fn is_consistent(&self) -> bool {
        self.app_kind != AppKind::ManagedArchive || self.needs_managed_runtime
    }

    pub fn satisfied_by(&self, caps: &WorkerCapabilities) -> bool {
        fn field_ok(want: &str, have: &str) -> bool {
            want == ANY_PLATFORM || want == have
        }
        field_ok(&self.cpu_arch, &caps.cpu_arch)
            && field_ok(&self.os, &caps.os)
            && (!self.needs_managed_runtime || caps.managed_runtime)
    }
}

/// What a worker host offers.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct WorkerCapabilities {
    pub cpu_arch: String,
    pub os: String,
    pub managed_runtime: bool,
}

impl WorkerCapabilities {
    pub fn new(cpu_arch: impl Into<String>, os: impl Into<String>, managed_runtime: bool) -> Self {
        WorkerCapabilities {
            cpu_arch: cpu_arch.into(),
            os: os.into(),
            managed_runtime,
        }
    }

    /// Capabilities of the running host, without a managed runtime.
    pub fn local() -> Self {
        Self::new(std::env::consts::ARCH, std::env::consts::OS, false)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub enum Retention {
    #[default]
    DiscardOnFetch,
    KeepUntilSessionEnd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskStatus {
    Pending,
    Scheduled,
    Completed,
    Aborted,
}

impl TaskStatus {
    pub fn is_terminal(self) -> bool {
        matches!(self, TaskStatus::Completed | TaskStatus::Aborted)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskSummary {
    pub task_id: String,
    pub label: String,
    pub status: TaskStatus,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Directive {
    Continue,
    Stop,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RejectReason {
    /// A result for the task is already stored.
    AlreadyCompleted,
    /// The task is currently assigned to a different worker, or to nobody.
    NotAssignee,
    /// The task was aborted after exhausting its attempts.
    TaskAborted,
    UnknownTask,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ErrorCode {
    AuthDenied,
    UnknownApp,
    QueueFull,
    WorkerBusy,
    PayloadTooLarge,
    NotOwner,
    NotReady,
    Gone,
    Aborted,
    DuplicateApp,
    UnknownTask,
    BadRequest,
    Internal,
}

impl fmt::Display for ErrorCode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}
