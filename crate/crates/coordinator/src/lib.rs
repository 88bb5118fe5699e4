//! The coordinator: admits tasks from clients, hands them to workers that
//! ask for work, tracks worker liveness and stores results. Every state
//! change is journaled before it is acknowledged, so a restarted
//! coordinator resumes exactly where it stopped.

pub mod config;
pub mod coordinator;
pub mod journal;
pub mod model;
pub mod server;
pub mod service;
pub mod state;
#[cfg(any(test, feature = "testkit"))]
pub mod testkit;

pub use config::{CoordinatorConfig, UserEntry};
pub use coordinator::{
    Assignment, Coordinator, CoordinatorError, Principal, RecoveryReport, SubmitRequest, SweepReport, UploadOutcome,
};
pub use journal::{read_journal, Journal, JournalContents, JournalEntry, JournalError, JournalEvent};
pub use model::{AclEntry, AppRecord, ResultRecord, TaskDescriptor, WorkerRecord, WorkerState};
pub use server::Server;
pub use service::{Service, SharedService};
pub use state::{ApplyError, CoordinatorState};
