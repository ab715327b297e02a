//! Trial fan-out over a rayon pool and the per-filter reduction.

use nlos_track_core::filters::FilterKind;
use nlos_track_core::metrics::{self, MetricsBundle, STEADY_FRACTION};
use nlos_track_core::scenario::{run_trial, ScenarioSpec, TrialRecord};
use nlos_track_core::Error;
use rayon::prelude::*;

use crate::AppError;

/// Runs every trial of `spec`, at most `threads` at a time (all cores when
/// `None`). Records come back sorted by trial id.
pub fn run_experiment(
    spec: &ScenarioSpec,
    filters: &[FilterKind],
    threads: Option<usize>,
) -> Result<Vec<TrialRecord>, AppError> {
    spec.validate()
        .map_err(|e| AppError::Config(e.to_string()))?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    let mut records = pool
        .install(|| {
            (0..spec.trials)
                .into_par_iter()
                .map(|t| run_trial(spec, t, filters))
                .collect::<Result<Vec<_>, _>>()
        })
        .map_err(|e| AppError::Runtime(e.to_string()))?;
    records.sort_by_key(|r| r.trial);
    Ok(records)
}

/// One filter's reduced results; `metrics` is `None` when every trial diverged.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterSummary {
    pub kind: FilterKind,
    pub metrics: Option<MetricsBundle>,
    pub diverged_trials: usize,
    pub infeasible_skips: usize,
    pub projected_points: usize,
    pub dense_fallbacks: usize,
    /// Largest disc violation of a constrained mean over the run.
    pub max_mean_violation: Option<f64>,
}

pub fn summarize_run(
    records: &[TrialRecord],
    filters: &[FilterKind],
) -> Result<Vec<FilterSummary>, AppError> {
    filters
        .iter()
        .map(|&kind| {
            let metrics = match metrics::summarize(records, kind, STEADY_FRACTION) {
                Ok(m) => Some(m),
                Err(Error::AllDiverged { .. }) => None,
                Err(e) => return Err(AppError::Runtime(e.to_string())),
            };
            let traces: Vec<_> = records.iter().filter_map(|r| r.trace(kind)).collect();
            Ok(FilterSummary {
                kind,
                metrics,
                diverged_trials: metrics::diverged_count(records, kind),
                infeasible_skips: traces
                    .iter()
                    .map(|t| t.infeasible_skips.iter().filter(|s| **s).count())
                    .sum(),
                projected_points: traces
                    .iter()
                    .map(|t| t.projected.iter().map(|p| *p as usize).sum::<usize>())
                    .sum(),
                dense_fallbacks: traces.iter().map(|t| t.dense_fallbacks).sum(),
                max_mean_violation: traces
                    .iter()
                    .flat_map(|t| t.mean_violation.iter().flatten())
                    .copied()
                    .reduce(f64::max),
            })
        })
        .collect()
}
