//! Client library: idempotent batch submission, result collection and a
//! file-driven batch feeder.
//!
//! Submission is keyed by label. Before submitting, [`Client::submit_batch`]
//! lists the caller's tasks on the coordinator and reuses the id of every
//! label already present, so a batch interrupted at any point can simply be
//! run again.

pub mod client;
pub mod config;
pub mod feeder;

pub use client::{BatchSpec, Client, ClientError, TaskOutcome};
pub use config::ClientConfig;
pub use feeder::{
    feeder_run, parse_jobs, read_jobs, result_path, FeederError, FeederOptions, FeederReport, Job, JobsError,
};
