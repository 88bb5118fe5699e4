//! Analytic makespan of a bag of identical tasks.

use std::time::Duration;

use crate::scenario::ScenarioSpec;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum OracleError {
    #[error("the oracle needs a single speed class")]
    InvalidForHeterogeneous,
    #[error("the oracle does not model faults")]
    Faulty,
}

/// `ceil(tasks / workers)` rounds of `per_task` each.
pub fn rounds_makespan(task_count: usize, workers: usize, per_task: Duration) -> Duration {
    assert!(workers > 0, "at least one worker");
    per_task * task_count.div_ceil(workers) as u32
}

/// Makespan of `spec` if every round took exactly one task time.
pub fn makespan_oracle(spec: &ScenarioSpec) -> Result<Duration, OracleError> {
    if !spec.is_homogeneous() {
        return Err(OracleError::InvalidForHeterogeneous);
    }
    if !spec.faults.is_empty() {
        return Err(OracleError::Faulty);
    }
    let per_task = Duration::from_secs_f64(spec.task_seconds(spec.pools[0].speed_factor));
    Ok(rounds_makespan(spec.workload.task_count, spec.pool_size(), per_task))
}

/// Greedy list schedule: each task in turn goes to the worker that becomes
/// free first, ties to the lowest index. `per_task[w]` is worker `w`'s
/// time per task.
pub fn greedy_makespan(per_task: &[f64], task_count: usize) -> f64 {
    let mut free_at = vec![0.0f64; per_task.len()];
    for _ in 0..task_count {
        let w = (0..free_at.len())
            .min_by(|&a, &b| free_at[a].total_cmp(&free_at[b]))
            .expect("at least one worker");
        free_at[w] += per_task[w];
    }
    free_at.into_iter().fold(0.0, f64::max)
}
