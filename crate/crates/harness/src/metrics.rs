//! Run measurements and the analyses behind the two experiment figures:
//! the decreasingly sorted execution-time curve and the utilization curve.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::Serialize;
use xw_common::Digest;
use xw_protocol::TaskStatus;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TaskRow {
    pub task_id: String,
    pub worker_id: String,
    /// From submission to the assignment that produced the stored result.
    pub queue_wait: f64,
    pub execution_seconds: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Tick {
    pub time: f64,
    pub busy_workers: usize,
    pub connected_workers: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AssignmentRecord {
    pub time_ms: u64,
    pub task_id: String,
    pub worker_id: String,
    pub attempt: u32,
}

/// State hashes around one coordinator restart.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RecoveryCheck {
    pub killed_at_ms: u64,
    pub restarted_at_ms: u64,
    pub before: Digest,
    pub after: Digest,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunMetrics {
    pub scenario: String,
    pub seed: u64,
    pub pool_size: usize,
    pub task_count: usize,
    pub per_task: Vec<TaskRow>,
    pub per_tick: Vec<Tick>,
    /// From submission to the last task reaching a final state.
    pub makespan: f64,
    pub completed: usize,
    pub aborted: usize,
    pub assignments: Vec<AssignmentRecord>,
    /// Upload acknowledgements received per task.
    pub accepted_uploads: BTreeMap<String, usize>,
    /// ResultStored entries per task in the coordinator's journal.
    pub stored_results: BTreeMap<String, usize>,
    /// Digest of each fetched result, by task label.
    pub result_digests: BTreeMap<String, Digest>,
    pub recoveries: Vec<RecoveryCheck>,
    pub final_state_hash: Option<Digest>,
    /// Pool index of every worker, by worker id.
    pub worker_pools: BTreeMap<String, usize>,
    /// State of every task when the run ended, by task id.
    pub final_tasks: BTreeMap<String, FinalTask>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct FinalTask {
    pub status: TaskStatus,
    pub attempt: u32,
}

impl RunMetrics {
    /// Acknowledged uploads beyond the first, summed over tasks.
    pub fn duplicate_accepts(&self) -> usize {
        self.accepted_uploads.values().map(|n| n.saturating_sub(1)).sum()
    }

    pub fn pool_of(&self, worker_id: &str) -> Option<usize> {
        self.worker_pools.get(worker_id).copied()
    }
}

/// Execution times of all completed tasks, largest first.
pub fn sorted_execution_curve(m: &RunMetrics) -> Vec<f64> {
    let mut v: Vec<f64> = m.per_task.iter().map(|r| r.execution_seconds).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}

/// `(time, busy_workers / pool size)` for every sample.
pub fn utilization_series(m: &RunMetrics) -> Vec<(f64, f64)> {
    let pool = m.pool_size.max(1) as f64;
    m.per_tick
        .iter()
        .map(|t| (t.time, t.busy_workers as f64 / pool))
        .collect()
}

pub fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => sorted[n / 2],
        _ => (sorted[n / 2 - 1] + sorted[n / 2]) / 2.0,
    }
}

/// `(max - min) / median` of a curve.
pub fn relative_range(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    match (v.first(), v.last()) {
        (Some(lo), Some(hi)) => (hi - lo) / median(&v),
        _ => f64::NAN,
    }
}

/// Split of a utilization series into ramp, plateau and tail.
///
/// The plateau runs from the first sample at the peak to the last sample
/// at or above 90% of it; the ramp precedes it and the tail follows it.
#[derive(Debug, Clone, PartialEq)]
pub struct Phases {
    pub peak: f64,
    pub ramp: std::ops::Range<usize>,
    pub plateau: std::ops::Range<usize>,
    pub tail: std::ops::Range<usize>,
    pub plateau_mean: f64,
    pub ramp_non_decreasing: bool,
    pub tail_non_increasing: bool,
}

pub const PLATEAU_LEVEL: f64 = 0.9;

impl Phases {
    pub fn plateau_holds(&self) -> bool {
        self.peak > 0.0 && self.plateau_mean >= PLATEAU_LEVEL * self.peak
    }

    pub fn passes(&self) -> bool {
        self.ramp_non_decreasing && self.plateau_holds() && self.tail_non_increasing
    }
}

pub fn three_phases(series: &[(f64, f64)]) -> Phases {
    let ys: Vec<f64> = series.iter().map(|p| p.1).collect();
    let peak = ys.iter().copied().fold(0.0, f64::max);
    let n = ys.len();
    let first_peak = ys.iter().position(|&y| y == peak).unwrap_or(n);
    let last_high = ys
        .iter()
        .rposition(|&y| y >= PLATEAU_LEVEL * peak)
        .map(|i| i + 1)
        .unwrap_or(first_peak)
        .max(first_peak);
    let plateau = first_peak..last_high;
    let plateau_mean = if plateau.is_empty() {
        0.0
    } else {
        ys[plateau.clone()].iter().sum::<f64>() / plateau.len() as f64
    };
    Phases {
        peak,
        ramp: 0..first_peak,
        plateau,
        tail: last_high..n,
        plateau_mean,
        ramp_non_decreasing: ys[..first_peak].windows(2).all(|w| w[0] <= w[1]),
        tail_non_increasing: ys[last_high.min(n)..].windows(2).all(|w| w[0] >= w[1]),
    }
}

/// Exact 2-means clustering of one-dimensional data.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoMeans {
    /// Cluster of every input value: 0 for the lower one, 1 for the upper.
    pub labels: Vec<usize>,
    pub centers: [f64; 2],
    pub sizes: [usize; 2],
}

/// In one dimension the optimal clusters are contiguous in sorted order,
/// so trying every split point finds the global optimum.
pub fn two_means(values: &[f64]) -> Option<TwoMeans> {
    if values.len() < 2 {
        return None;
    }
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let n = sorted.len();
    let mut prefix = vec![0.0; n + 1];
    let mut prefix_sq = vec![0.0; n + 1];
    for (i, x) in sorted.iter().enumerate() {
        prefix[i + 1] = prefix[i] + x;
        prefix_sq[i + 1] = prefix_sq[i] + x * x;
    }
    let sse = |a: usize, b: usize| {
        let k = (b - a) as f64;
        let s = prefix[b] - prefix[a];
        (prefix_sq[b] - prefix_sq[a]) - s * s / k
    };
    let split = (1..n)
        .min_by(|&a, &b| (sse(0, a) + sse(a, n)).total_cmp(&(sse(0, b) + sse(b, n))))
        .expect("n >= 2");
    let mut labels = vec![0; n];
    for &i in &order[split..] {
        labels[i] = 1;
    }
    Some(TwoMeans {
        labels,
        centers: [
            prefix[split] / split as f64,
            (prefix[n] - prefix[split]) / (n - split) as f64,
        ],
        sizes: [split, n - split],
    })
}

/// Mean silhouette coefficient of a clustering; singletons score 0.
pub fn silhouette(values: &[f64], labels: &[usize]) -> f64 {
    let k = labels.iter().copied().max().map_or(0, |m| m + 1);
    if values.is_empty() || k < 2 {
        return 0.0;
    }
    let mut total = 0.0;
    for (i, &x) in values.iter().enumerate() {
        let mut sum = vec![0.0; k];
        let mut count = vec![0usize; k];
        for (j, &y) in values.iter().enumerate() {
            if i != j {
                sum[labels[j]] += (x - y).abs();
                count[labels[j]] += 1;
            }
        }
        let own = labels[i];
        if count[own] == 0 {
            continue;
        }
        let a = sum[own] / count[own] as f64;
        let b = (0..k)
            .filter(|&c| c != own && count[c] > 0)
            .map(|c| sum[c] / count[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 && b.is_finite() {
            total += (b - a) / m;
        }
    }
    total / values.len() as f64
}

pub const EXECUTION_CSV: &str = "execution_curve.csv";
pub const UTILIZATION_CSV: &str = "utilization.csv";

/// Writes the execution curve and the utilization series as CSV.
pub fn emit_csv(m: &RunMetrics, out_dir: &Path) -> io::Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir)?;
    let exec_path = out_dir.join(EXECUTION_CSV);
    let mut w = csv::Writer::from_path(&exec_path)?;
    w.write_record(["rank", "seconds"])?;
    for (i, s) in sorted_execution_curve(m).iter().enumerate() {
        w.write_record([(i + 1).to_string(), format!("{s:.3}")])?;
    }
    w.flush()?;

    let util_path = out_dir.join(UTILIZATION_CSV);
    let mut w = csv::Writer::from_path(&util_path)?;
    w.write_record(["time", "busy_fraction", "connected"])?;
    for ((time, frac), tick) in utilization_series(m).iter().zip(&m.per_tick) {
        w.write_record([
            format!("{time:.3}"),
            format!("{frac:.6}"),
            tick.connected_workers.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(vec![exec_path, util_path])
}
