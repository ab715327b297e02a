//! Comparison filters: EKF with outlier rejection, bias-aware EKF, smoothed
//! EKF and the mean-projection Kalman filter.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix4};

use crate::error::{Error, Result};
use crate::linalg::UpperCholesky;
use crate::model::{
    position, BiasModel, LinkLabel, MeasurementFrame, MotionModel, Position, StateVector,
};
use crate::projection::{build_region, project_sigma};
use crate::srukf::{step_unconstrained, FilterState};

/// Floor added to a range derivative's denominator when the estimate sits on an anchor.
pub const JACOBIAN_FLOOR: f64 = 1e-9;

/// Dense-covariance state used by the EKF family.
#[derive(Debug, Clone, PartialEq)]
pub struct EkfState {
    pub mean: StateVector,
    pub cov: Matrix4<f64>,
}

impl EkfState {
    pub fn from_filter(state: &FilterState) -> Self {
        Self {
            mean: state.mean,
            cov: state.covariance(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BaselineKind {
    EkfOutlierReject,
    Pkf { epsilon: f64 },
    Sekf(SekfParams),
    Bekf { bias_mean: f64, bias_var: f64 },
}

impl BaselineKind {
    /// BEKF parameters from the analytic moments of a bias model.
    pub fn bekf_for(bias: &BiasModel) -> Self {
        BaselineKind::Bekf {
            bias_mean: bias.mean(),
            bias_var: bias.variance(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BaselineKind::EkfOutlierReject => true,
            BaselineKind::Pkf { epsilon } => epsilon >= 0.0 && epsilon.is_finite(),
            BaselineKind::Sekf(p) => {
                p.scale >= 1.0 && p.scale.is_finite() && p.smoother_q_scale > 0.0
            }
            BaselineKind::Bekf {
                bias_mean,
                bias_var,
            } => bias_mean >= 0.0 && bias_var >= 0.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(alloc::format!(
                "invalid baseline parameters {self:?}"
            )))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SekfParams {
    /// Multiplier on `σ_n²` for links reported NLOS.
    pub scale: f64,
    /// Random-walk variance of the range smoother as a multiple of `σ_n²`.
    pub smoother_q_scale: f64,
}

impl Default for SekfParams {
    fn default() -> Self {
        Self {
            scale: 1.5,
            smoother_q_scale: 0.25,
        }
    }
}

pub fn ekf_predict(state: &EkfState, model: &MotionModel) -> EkfState {
    EkfState {
        mean: model.transition() * state.mean,
        cov: model.propagate_covariance(&state.cov),
    }
}

/// Rows `(x − aᵢ)ᵀ/‖x − aᵢ‖` padded with zeros for velocity.
pub fn range_jacobian(x: &Position, anchors: &[Position]) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(anchors.len(), 4);
    for (i, a) in anchors.iter().enumerate() {
        let d = x - a;
        let mut n = d.norm();
        if n < JACOBIAN_FLOOR {
            n += JACOBIAN_FLOOR;
        }
        h[(i, 0)] = d[0] / n;
        h[(i, 1)] = d[1] / n;
    }
    h
}

/// Joseph-form EKF update with ranges `z`, anchors and diagonal noise `r_diag`.
pub fn ekf_update(
    state: &EkfState,
    anchors: &[Position],
    z: &[f64],
    r_diag: &[f64],
) -> Result<EkfState> {
    let m = anchors.len();
    if m == 0 {
        return Ok(state.clone());
    }
    if z.len() != m || r_diag.len() != m {
        return Err(Error::Dimension("ekf_update"));
    }
    let x = position(&state.mean);
    let h = range_jacobian(&x, anchors);
    let nu = DVector::from_fn(m, |i, _| z[i] - (x - anchors[i]).norm());
    let p = DMatrix::from_fn(4, 4, |i, j| state.cov[(i, j)]);
    let r = DMatrix::from_diagonal(&DVector::from_column_slice(r_diag));
    let s = &h * &p * h.transpose() + &r;
    let s_inv = s.cholesky().ok_or(Error::FilterNumericalFailure)?.inverse();
    let k = &p * h.transpose() * s_inv;
    let dx = &k * nu;
    let ikh = DMatrix::identity(4, 4) - &k * &h;
    let pn = &ikh * &p * ikh.transpose() + &k * &r * k.transpose();
    let cov = Matrix4::from_fn(|i, j| 0.5 * (pn[(i, j)] + pn[(j, i)]));
    let mean = state.mean + StateVector::from_fn(|i, _| dx[i]);
    if !mean.iter().chain(cov.iter()).all(|v| v.is_finite()) {
        return Err(Error::NonFinite("ekf_update"));
    }
    Ok(EkfState { mean, cov })
}

/// EKF on LOS links only; all-NLOS epochs are prediction only.
pub fn ekf_or_step(
    state: &EkfState,
    model: &MotionModel,
    frame: &MeasurementFrame,
) -> Result<EkfState> {
    let prior = ekf_predict(state, model);
    let (anchors, z): (Vec<Position>, Vec<f64>) = frame
        .reported(LinkLabel::Los)
        .map(|l| (l.anchor.position, l.range))
        .unzip();
    let r = alloc::vec![frame.sigma_n * frame.sigma_n; z.len()];
    ekf_update(&prior, &anchors, &z, &r)
}

/// EKF on every link; NLOS ranges are debiased by the bias mean and carry the
/// extra bias variance.
pub fn bekf_step(
    state: &EkfState,
    model: &MotionModel,
    frame: &MeasurementFrame,
    bias_mean: f64,
    bias_var: f64,
) -> Result<EkfState> {
    let prior = ekf_predict(state, model);
    let s2 = frame.sigma_n * frame.sigma_n;
    let mut anchors = Vec::with_capacity(frame.links.len());
    let mut z = Vec::with_capacity(frame.links.len());
    let mut r = Vec::with_capacity(frame.links.len());
    for l in &frame.links {
        anchors.push(l.anchor.position);
        match l.reported_label {
            LinkLabel::Los => {
                z.push(l.range);
                r.push(s2);
            }
            LinkLabel::Nlos => {
                z.push(l.range - bias_mean);
                r.push(s2 + bias_var);
            }
        }
    }
    ekf_update(&prior, &anchors, &z, &r)
}

/// Scalar random-walk Kalman smoother for one link's range.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RangeSmoother {
    pub estimate: f64,
    pub variance: f64,
}

impl RangeSmoother {
    /// Starts at the first measurement with the measurement variance.
    pub fn start(z: f64, meas_var: f64) -> Self {
        Self {
            estimate: z,
            variance: meas_var,
        }
    }

    pub fn step(&mut self, z: f64, process_var: f64, meas_var: f64) -> f64 {
        let p = self.variance + process_var;
        let k = p / (p + meas_var);
        self.estimate += k * (z - self.estimate);
        self.variance = (1.0 - k) * p;
        self.estimate
    }
}

/// SEKF state: the EKF plus one range smoother per link (by link index).
#[derive(Debug, Clone, PartialEq)]
pub struct SekfState {
    pub ekf: EkfState,
    pub smoothers: Vec<Option<RangeSmoother>>,
}

impl SekfState {
    pub fn new(ekf: EkfState) -> Self {
        Self {
            ekf,
            smoothers: Vec::new(),
        }
    }
}

/// Smooth each range, then run the EKF on all smoothed ranges with the NLOS
/// entries of `R` scaled.
pub fn sekf_step(
    state: &SekfState,
    model: &MotionModel,
    frame: &MeasurementFrame,
    params: SekfParams,
) -> Result<SekfState> {
    let s2 = frame.sigma_n * frame.sigma_n;
    let q = params.smoother_q_scale * s2;
    let mut smoothers = state.smoothers.clone();
    if smoothers.len() < frame.links.len() {
        smoothers.resize(frame.links.len(), None);
    }
    let mut anchors = Vec::with_capacity(frame.links.len());
    let mut z = Vec::with_capacity(frame.links.len());
    let mut r = Vec::with_capacity(frame.links.len());
    for (l, slot) in frame.links.iter().zip(smoothers.iter_mut()) {
        let smoothed = match slot {
            Some(s) => s.step(l.range, q, s2),
            None => {
                *slot = Some(RangeSmoother::start(l.range, s2));
                l.range
            }
        };
        anchors.push(l.anchor.position);
        z.push(smoothed);
        r.push(match l.reported_label {
            LinkLabel::Los => s2,
            LinkLabel::Nlos => params.scale * s2,
        });
    }
    let ekf = ekf_update(&ekf_predict(&state.ekf, model), &anchors, &z, &r)?;
    Ok(SekfState { ekf, smoothers })
}

/// Square-root UKF step followed by projecting the mean alone onto the disc
/// region. The factor is left as the unconstrained posterior.
///
/// Returns the state and whether the region was found empty.
pub fn pkf_step(
    state: &FilterState,
    model: &MotionModel,
    frame: &MeasurementFrame,
    eta_alpha: f64,
    epsilon: f64,
) -> Result<(FilterState, bool)> {
    let post = step_unconstrained(state, model, frame, eta_alpha)?.state;
    let region = build_region(frame, epsilon)?;
    if region.is_empty() {
        return Ok((post, false));
    }
    match project_sigma(&post.mean, &post.factor, &region) {
        Ok(r) => Ok((
            FilterState {
                mean: r.point,
                factor: post.factor,
            },
            false,
        )),
        Err(Error::InfeasibleRegion(_)) => Ok((post, true)),
        Err(e) => Err(e),
    }
}

/// Factor of an EKF covariance, for reporting.
pub fn ekf_factor(state: &EkfState) -> Option<UpperCholesky> {
    UpperCholesky::from_covariance(&DMatrix::from_fn(4, 4, |i, j| state.cov[(i, j)]))
}
