//! Position-error statistics over Monte-Carlo trials.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::filters::FilterKind;
use crate::model::position;
use crate::scenario::TrialRecord;

/// Default fraction of trailing epochs averaged for steady-state figures.
pub const STEADY_FRACTION: f64 = 0.2;

/// Squared position error per epoch for one filter in one trial.
pub fn squared_errors(record: &TrialRecord, kind: FilterKind) -> Option<Vec<f64>> {
    let trace = record.trace(kind)?;
    Some(
        trace
            .estimates
            .iter()
            .zip(&record.truth)
            .map(|(e, s)| (position(e) - position(s)).norm_squared())
            .collect(),
    )
}

fn usable(records: &[TrialRecord], kind: FilterKind) -> Result<(Vec<Vec<f64>>, usize)> {
    let mut diverged = 0;
    let mut rows = Vec::new();
    for r in records {
        let trace = r.trace(kind).ok_or(Error::InvalidParameter(alloc::format!(
            "filter {kind} was not run"
        )))?;
        if trace.diverged {
            diverged += 1;
        } else {
            rows.push(squared_errors(r, kind).unwrap_or_default());
        }
    }
    if rows.is_empty() {
        return Err(Error::AllDiverged { epoch: 1 });
    }
    Ok((rows, diverged))
}

/// `ē_k = sqrt(mean over non-diverged trials of ‖x̂ − x‖²)` per epoch.
pub fn rmse(records: &[TrialRecord], kind: FilterKind) -> Result<Vec<f64>> {
    let (rows, _) = usable(records, kind)?;
    let k = rows[0].len();
    if rows.iter().any(|r| r.len() != k) {
        return Err(Error::Dimension("rmse: trials differ in length"));
    }
    let n = rows.len() as f64;
    Ok((0..k)
        .map(|e| libm::sqrt(rows.iter().map(|r| r[e]).sum::<f64>() / n))
        .collect())
}

/// Empirical CDF of pooled samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalCdf {
    sorted: Vec<f64>,
}

impl EmpiricalCdf {
    pub fn new(mut samples: Vec<f64>) -> Result<Self> {
        if samples.iter().any(|v| v.is_nan()) {
            return Err(Error::NonFinite("EmpiricalCdf samples"));
        }
        samples.sort_by(f64::total_cmp);
        Ok(Self { sorted: samples })
    }

    /// Fraction of samples `≤ x`.
    pub fn at(&self, x: f64) -> f64 {
        if self.sorted.is_empty() {
            return 0.0;
        }
        self.sorted.partition_point(|v| *v <= x) as f64 / self.sorted.len() as f64
    }

    /// Smallest sample `v` with `at(v) ≥ p`.
    pub fn quantile(&self, p: f64) -> f64 {
        if self.sorted.is_empty() {
            return f64::NAN;
        }
        let n = self.sorted.len();
        let idx = libm::ceil(p.clamp(0.0, 1.0) * n as f64) as usize;
        self.sorted[idx.clamp(1, n) - 1]
    }

    pub fn samples(&self) -> &[f64] {
        &self.sorted
    }
}

/// CDF of the squared position error pooled over trials and epochs.
pub fn error_cdf(records: &[TrialRecord], kind: FilterKind) -> Result<EmpiricalCdf> {
    let (rows, _) = usable(records, kind)?;
    EmpiricalCdf::new(rows.into_iter().flatten().collect())
}

/// CDF of the position error distance (square root of [`error_cdf`] samples).
pub fn distance_cdf(records: &[TrialRecord], kind: FilterKind) -> Result<EmpiricalCdf> {
    let (rows, _) = usable(records, kind)?;
    EmpiricalCdf::new(rows.into_iter().flatten().map(libm::sqrt).collect())
}

/// Mean of the trailing `fraction` of `series` (at least one entry).
pub fn steady_state(series: &[f64], fraction: f64) -> f64 {
    if series.is_empty() {
        return f64::NAN;
    }
    let n = (libm::ceil(series.len() as f64 * fraction.clamp(0.0, 1.0)) as usize)
        .clamp(1, series.len());
    series[series.len() - n..].iter().sum::<f64>() / n as f64
}

/// Summary of one filter over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsBundle {
    pub kind: FilterKind,
    pub rmse_by_epoch: Vec<f64>,
    pub cdf: EmpiricalCdf,
    pub steady_state_rmse: f64,
    pub used_trials: usize,
    pub diverged_trials: usize,
}

pub fn summarize(
    records: &[TrialRecord],
    kind: FilterKind,
    fraction: f64,
) -> Result<MetricsBundle> {
    let (_, diverged) = usable(records, kind)?;
    let rmse_by_epoch = rmse(records, kind)?;
    Ok(MetricsBundle {
        kind,
        steady_state_rmse: steady_state(&rmse_by_epoch, fraction),
        rmse_by_epoch,
        cdf: error_cdf(records, kind)?,
        used_trials: records.len() - diverged,
        diverged_trials: diverged,
    })
}

/// Number of trials in which `kind` was flagged diverged.
pub fn diverged_count(records: &[TrialRecord], kind: FilterKind) -> usize {
    records
        .iter()
        .filter(|r| r.trace(kind).is_some_and(|t| t.diverged))
        .count()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::StateVector;
    use crate::scenario::FilterTrace;
    use alloc::vec;
    use proptest::prelude::*;

    fn record(
        trial: usize,
        truth: &[(f64, f64)],
        est: &[(f64, f64)],
        diverged: bool,
    ) -> TrialRecord {
        let sv = |&(x, y): &(f64, f64)| StateVector::new(x, y, 0.0, 0.0);
        TrialRecord {
            trial,
            truth: truth.iter().map(sv).collect(),
            frames: Vec::new(),
            traces: vec![FilterTrace {
                kind: FilterKind::Csrukf,
                estimates: est.iter().map(sv).collect(),
                diverged,
                diverged_at: None,
                projected: Vec::new(),
                infeasible_skips: Vec::new(),
                mean_violation: Vec::new(),
                dense_fallbacks: 0,
                failure: None,
            }],
        }
    }

    #[test]
    fn perfect_estimator_has_zero_rmse() {
        let r = record(
            0,
            &[(1.0, 2.0), (3.0, 4.0)],
            &[(1.0, 2.0), (3.0, 4.0)],
            false,
        );
        assert_eq!(
            rmse(core::slice::from_ref(&r), FilterKind::Csrukf).unwrap(),
            vec![0.0, 0.0]
        );
        let c = error_cdf(&[r], FilterKind::Csrukf).unwrap();
        assert_eq!(c.at(0.0), 1.0);
        assert_eq!(c.at(5.0), 1.0);
    }

    #[test]
    fn constant_offset() {
        let r = record(0, &[(0.0, 0.0); 5], &[(3.0, 0.0); 5], false);
        assert!(rmse(&[r], FilterKind::Csrukf)
            .unwrap()
            .iter()
            .all(|v| (*v - 3.0).abs() < 1e-15));
    }

    #[test]
    fn two_trials_pool_squares() {
        let a = record(0, &[(0.0, 0.0)], &[(3.0, 0.0)], false);
        let b = record(1, &[(0.0, 0.0)], &[(0.0, 4.0)], false);
        let e = rmse(&[a, b], FilterKind::Csrukf).unwrap();
        assert!((e[0] - 3.5355339059327378).abs() < 1e-12);
    }

    #[test]
    fn diverged_trials_are_excluded() {
        let a = record(0, &[(0.0, 0.0)], &[(3.0, 0.0)], false);
        let b = record(1, &[(0.0, 0.0)], &[(1e6, 0.0)], true);
        let recs = [a, b.clone()];
        assert_eq!(rmse(&recs, FilterKind::Csrukf).unwrap(), vec![3.0]);
        assert_eq!(diverged_count(&recs, FilterKind::Csrukf), 1);
        let m = summarize(&recs, FilterKind::Csrukf, 0.2).unwrap();
        assert_eq!((m.used_trials, m.diverged_trials), (1, 1));
        assert!(matches!(
            rmse(&[b], FilterKind::Csrukf),
            Err(Error::AllDiverged { .. })
        ));
        assert!(rmse(&recs, FilterKind::Pkf).is_err());
    }

    #[test]
    fn two_point_cdf() {
        let c = EmpiricalCdf::new(vec![4.0, 1.0]).unwrap();
        assert_eq!(c.at(2.0), 0.5);
        assert_eq!(c.at(0.5), 0.0);
        assert_eq!(c.quantile(0.5), 1.0);
        assert_eq!(c.quantile(1.0), 4.0);
    }

    #[test]
    fn distance_cdf_is_root_of_squared() {
        let a = record(
            0,
            &[(0.0, 0.0), (0.0, 0.0)],
            &[(3.0, 0.0), (0.0, 4.0)],
            false,
        );
        let d = distance_cdf(core::slice::from_ref(&a), FilterKind::Csrukf).unwrap();
        let s = error_cdf(&[a], FilterKind::Csrukf).unwrap();
        assert_eq!(d.samples(), &[3.0, 4.0]);
        assert_eq!(d.at(3.5), s.at(3.5 * 3.5));
    }

    #[test]
    fn steady_state_window() {
        let s: Vec<f64> = (1..=10).map(|v| v as f64).collect();
        assert_eq!(steady_state(&s, 0.2), 9.5);
        assert_eq!(steady_state(&s, 0.0), 10.0);
        assert_eq!(steady_state(&s, 1.0), 5.5);
    }

    proptest! {
        #[test]
        fn cdf_is_monotone(xs in proptest::collection::vec(0.0..1e4_f64, 1..200), qs in proptest::collection::vec(0.0..1.2e4_f64, 2..50)) {
            let c = EmpiricalCdf::new(xs).unwrap();
            let mut qs = qs;
            qs.sort_by(f64::total_cmp);
            let vals: Vec<f64> = qs.iter().map(|q| c.at(*q)).collect();
            prop_assert!(vals.windows(2).all(|w| w[0] <= w[1]));
            prop_assert!(vals.iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }
}
