//! The worker: a volunteer host agent that asks the coordinator for work
//! when its owner's policy allows, runs each task in a confined sandbox,
//! signals that it is alive while computing, and sends results back.

pub mod agent;
pub mod config;
pub mod policy;
pub mod sandbox;
pub mod state;

pub use agent::{offline_continue, restart_recovery, Agent, AgentError, AgentStats, Backoff, StopHandle};
pub use config::{SandboxSettings, WorkerConfig};
pub use policy::{
    policy_allows, ActivationPolicy, AvailabilityWindow, FixedHostProbe, HostMetrics, HostProbe, ProcHostProbe,
};
pub use sandbox::{
    sandbox_exec, CancelToken, Executor, Limit, NativeExecutor, SandboxError, SandboxLimits, SandboxOutput,
};
pub use state::{HeldAssignment, Phase, StateError, StateLock, StateStore, WorkerState};
