//! One interface over every estimator the harness compares.

use core::fmt;
use core::str::FromStr;

use crate::baseline::{
    bekf_step, ekf_or_step, pkf_step, sekf_step, EkfState, SekfParams, SekfState,
};
use crate::error::{Error, Result};
use crate::model::{MeasurementFrame, MotionModel, StateVector};
use crate::projection::csrukf_step;
use crate::srukf::{step_unconstrained, FilterState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FilterKind {
    Csrukf,
    Srukf,
    Pkf,
    EkfOr,
    Sekf,
    Bekf,
}

impl FilterKind {
    pub const ALL: [FilterKind; 6] = [
        FilterKind::Csrukf,
        FilterKind::Srukf,
        FilterKind::Pkf,
        FilterKind::EkfOr,
        FilterKind::Sekf,
        FilterKind::Bekf,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterKind::Csrukf => "csrukf",
            FilterKind::Srukf => "srukf",
            FilterKind::Pkf => "pkf",
            FilterKind::EkfOr => "ekf-or",
            FilterKind::Sekf => "sekf",
            FilterKind::Bekf => "bekf",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        FilterKind::ALL
            .into_iter()
            .find(|k| k.name() == s || (s == "ekf_or" && *k == FilterKind::EkfOr))
            .ok_or_else(|| Error::InvalidParameter(alloc::format!("unknown filter '{s}'")))
    }
}

/// Tuning shared by all filters of one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub eta_alpha: f64,
    pub epsilon: f64,
    pub sekf: SekfParams,
    pub bias_mean: f64,
    pub bias_var: f64,
}

/// Per-step diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepReport {
    pub projected: usize,
    pub infeasible_skip: bool,
    pub mean_violation: Option<f64>,
    pub dense_fallback: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Tracker {
    Csrukf(FilterState),
    Srukf(FilterState),
    Pkf(FilterState),
    EkfOr(EkfState),
    Sekf(SekfState),
    Bekf(EkfState),
}

impl Tracker {
    pub fn new(kind: FilterKind, init: &FilterState) -> Self {
        match kind {
            FilterKind::Csrukf => Tracker::Csrukf(init.clone()),
            FilterKind::Srukf => Tracker::Srukf(init.clone()),
            FilterKind::Pkf => Tracker::Pkf(init.clone()),
            FilterKind::EkfOr => Tracker::EkfOr(EkfState::from_filter(init)),
            FilterKind::Sekf => Tracker::Sekf(SekfState::new(EkfState::from_filter(init))),
            FilterKind::Bekf => Tracker::Bekf(EkfState::from_filter(init)),
        }
    }

    pub fn kind(&self) -> FilterKind {
        match self {
            Tracker::Csrukf(_) => FilterKind::Csrukf,
            Tracker::Srukf(_) => FilterKind::Srukf,
            Tracker::Pkf(_) => FilterKind::Pkf,
            Tracker::EkfOr(_) => FilterKind::EkfOr,
            Tracker::Sekf(_) => FilterKind::Sekf,
            Tracker::Bekf(_) => FilterKind::Bekf,
        }
    }

    pub fn mean(&self) -> StateVector {
        match self {
            Tracker::Csrukf(s) | Tracker::Srukf(s) | Tracker::Pkf(s) => s.mean,
            Tracker::EkfOr(s) | Tracker::Bekf(s) => s.mean,
            Tracker::Sekf(s) => s.ekf.mean,
        }
    }

    /// Advances one epoch in place.
    pub fn step(
        &mut self,
        model: &MotionModel,
        frame: &MeasurementFrame,
        p: &FilterParams,
    ) -> Result<StepReport> {
        let mut report = StepReport::default();
        match self {
            Tracker::Csrukf(s) => {
                let out = csrukf_step(s, model, frame, p.eta_alpha, p.epsilon)?;
                report = StepReport {
                    projected: out.projected,
                    infeasible_skip: out.infeasible_skip,
                    mean_violation: out.mean_violation,
                    dense_fallback: out.dense_fallback,
                };
                *s = out.state;
            }
            Tracker::Srukf(s) => {
                let out = step_unconstrained(s, model, frame, p.eta_alpha)?;
                report.dense_fallback = out.dense_fallback;
                *s = out.state;
            }
            Tracker::Pkf(s) => {
                let (next, skipped) = pkf_step(s, model, frame, p.eta_alpha, p.epsilon)?;
                report.infeasible_skip = skipped;
                *s = next;
            }
            Tracker::EkfOr(s) => *s = ekf_or_step(s, model, frame)?,
            Tracker::Sekf(s) => *s = sekf_step(s, model, frame, p.sekf)?,
            Tracker::Bekf(s) => *s = bekf_step(s, model, frame, p.bias_mean, p.bias_var)?,
        }
        Ok(report)
    }
}
