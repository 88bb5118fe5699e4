//! Batches of independent runs.
//!
//! Runs share nothing, so with the `parallel` feature they are spread over
//! a rayon pool; without it they run one after the other.

use crate::metrics::RunMetrics;
use crate::scenario::ScenarioSpec;
use crate::sim::{run_scenario, HarnessError};

pub type RunResult = Result<RunMetrics, HarnessError>;

pub fn run_sequential(specs: &[ScenarioSpec]) -> Vec<RunResult> {
    specs.iter().map(run_scenario).collect()
}

#[cfg(feature = "parallel")]
pub fn run_parallel(specs: &[ScenarioSpec]) -> Vec<RunResult> {
    use rayon::prelude::*;
    specs.par_iter().map(run_scenario).collect()
}

/// Runs every spec, in parallel when the feature is enabled. Results keep
/// the order of `specs`.
pub fn run_all(specs: &[ScenarioSpec]) -> Vec<RunResult> {
    #[cfg(feature = "parallel")]
    {
        run_parallel(specs)
    }
    #[cfg(not(feature = "parallel"))]
    {
        run_sequential(specs)
    }
}

/// `spec` once per seed.
pub fn with_seeds(spec: &ScenarioSpec, seeds: impl IntoIterator<Item = u64>) -> Vec<ScenarioSpec> {
    seeds.into_iter().map(|s| spec.clone().with_seed(s)).collect()
}
