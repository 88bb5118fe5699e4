//! Experiment driver: runs a real coordinator with many virtual workers in
//! virtual time, applies fault scenarios and measures the execution-time
//! and utilization curves of each run.

pub mod metrics;
pub mod oracle;
pub mod scenario;
pub mod sim;
pub mod sweep;

pub use metrics::{
    emit_csv, relative_range, silhouette, sorted_execution_curve, three_phases, two_means, utilization_series,
    FinalTask, Phases, RunMetrics, TaskRow, Tick, TwoMeans,
};
pub use oracle::{greedy_makespan, makespan_oracle, rounds_makespan, OracleError};
pub use scenario::{
    builtin, builtins, FaultEvent, FaultKind, PoolSpec, ScenarioError, ScenarioSpec, Target, Trigger, Workload,
};
pub use sim::{run_scenario, HarnessError};
