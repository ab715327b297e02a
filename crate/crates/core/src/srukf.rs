//! Square-root unscented Kalman filter over LOS ranges.
//!
//! The covariance never leaves factored form on the main path: prediction
//! re-triangularizes a stacked matrix, the innovation factor comes from a QR
//! of weighted residuals, and the update uses `T = Σ_sz·Uz⁻¹` followed by
//! rank-1 downdates of the prior factor with the columns of `T`.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix4};

use crate::error::{Error, Result};
use crate::linalg::{chol_downdate, qr_factor, solve_lower_vec, solve_upper_multi, UpperCholesky};
use crate::model::{position, LinkLabel, MeasurementFrame, MotionModel, Position, StateVector};

/// Dimension of the tracked state.
pub const STATE_DIM: usize = 4;

/// Mean and upper Cholesky factor of the state estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub mean: StateVector,
    pub factor: UpperCholesky,
}

impl FilterState {
    pub fn new(mean: StateVector, factor: UpperCholesky) -> Result<Self> {
        if factor.dim() != STATE_DIM {
            return Err(Error::Dimension("FilterState::new"));
        }
        if !mean.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("FilterState::new"));
        }
        Ok(Self { mean, factor })
    }

    pub fn covariance(&self) -> Matrix4<f64> {
        let c = self.factor.covariance();
        Matrix4::from_fn(|i, j| c[(i, j)])
    }

    pub fn position_covariance(&self) -> Matrix2<f64> {
        let c = self.factor.covariance();
        Matrix2::new(c[(0, 0)], c[(0, 1)], c[(1, 0)], c[(1, 1)])
    }
}

/// `2N+1` sigma points with their weights.
#[derive(Debug, Clone, PartialEq)]
pub struct SigmaSet {
    pub points: Vec<StateVector>,
    pub weights: Vec<f64>,
    pub eta_alpha: f64,
}

/// `(w⁰, wʲ)` for spread `eta` in dimension `n`: `1 − n/η` and `1/(2η)`.
pub fn sigma_weights(eta: f64, n: usize) -> (f64, f64) {
    (1.0 - n as f64 / eta, 1.0 / (2.0 * eta))
}

/// Sigma points `mean ± √η·(Uᵀ)ⱼ` plus the mean itself.
pub fn gen_sigma(mean: &StateVector, factor: &UpperCholesky, eta_alpha: f64) -> Result<SigmaSet> {
    if !(eta_alpha > 0.0 && eta_alpha.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!(
            "eta_alpha must be positive, got {eta_alpha}"
        )));
    }
    if factor.dim() != STATE_DIM {
        return Err(Error::Dimension("gen_sigma"));
    }
    let root = libm::sqrt(eta_alpha);
    let u = factor.as_matrix();
    let mut points = Vec::with_capacity(2 * STATE_DIM + 1);
    points.push(*mean);
    // column j of Uᵀ is row j of U
    let cols: Vec<StateVector> = (0..STATE_DIM)
        .map(|j| StateVector::from_fn(|i, _| u[(j, i)] * root))
        .collect();
    points.extend(cols.iter().map(|c| mean + c));
    points.extend(cols.iter().map(|c| mean - c));

    let (w0, wj) = sigma_weights(eta_alpha, STATE_DIM);
    let mut weights = alloc::vec![wj; 2 * STATE_DIM + 1];
    weights[0] = w0;
    Ok(SigmaSet {
        points,
        weights,
        eta_alpha,
    })
}

/// Predicted measurement statistics of one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct InnovationStats {
    pub z_pred: DVector<f64>,
    pub uz: UpperCholesky,
    /// `N × |L_k|` cross-covariance between state and measurement.
    pub cross: DMatrix<f64>,
}

/// Time update of mean and factor.
pub fn predict(state: &FilterState, model: &MotionModel) -> Result<FilterState> {
    let mean = model.f * state.mean;
    let u = state.factor.as_matrix();
    let ft = model.f.transpose();
    let gt = model.process_noise_sqrt() * model.g.transpose();
    let mut stack = DMatrix::zeros(STATE_DIM + 2, STATE_DIM);
    for i in 0..STATE_DIM {
        for j in 0..STATE_DIM {
            stack[(i, j)] = (0..STATE_DIM).map(|k| u[(i, k)] * ft[(k, j)]).sum();
        }
    }
    for i in 0..2 {
        for j in 0..STATE_DIM {
            stack[(STATE_DIM + i, j)] = gt[(i, j)];
        }
    }
    Ok(FilterState {
        mean,
        factor: qr_factor(&stack)?,
    })
}

/// Range predictions, innovation factor and cross-covariance from a sigma set.
pub fn measurement_stats(
    sig: &SigmaSet,
    anchors_los: &[Position],
    sigma_n: f64,
) -> Result<InnovationStats> {
    let m = anchors_los.len();
    if m == 0 {
        return Err(Error::Dimension(
            "measurement_stats needs at least one LOS anchor",
        ));
    }
    if let Some(&w) = sig.weights.iter().find(|&&w| w < 0.0) {
        return Err(Error::NegativeWeight(w));
    }
    let npts = sig.points.len();
    let z = DMatrix::from_fn(m, npts, |i, j| {
        (position(&sig.points[j]) - anchors_los[i]).norm()
    });
    let mut z_pred = DVector::zeros(m);
    for (j, w) in sig.weights.iter().enumerate() {
        z_pred += z.column(j) * *w;
    }

    let center = sig.points[0];
    let mut cross = DMatrix::zeros(STATE_DIM, m);
    let mut stack = DMatrix::zeros(npts + m, m);
    for (j, w) in sig.weights.iter().enumerate() {
        let dz = z.column(j) - &z_pred;
        let ds = sig.points[j] - center;
        for a in 0..STATE_DIM {
            for b in 0..m {
                cross[(a, b)] += w * ds[a] * dz[b];
            }
        }
        let sw = libm::sqrt(*w);
        for b in 0..m {
            stack[(j, b)] = sw * dz[b];
        }
    }
    for b in 0..m {
        stack[(npts + b, b)] = sigma_n;
    }
    Ok(InnovationStats {
        z_pred,
        uz: qr_factor(&stack)?,
        cross,
    })
}

/// Measurement update through triangular solves and downdates.
///
/// Fails with [`Error::FilterNumericalFailure`] when the downdated factor
/// would not be positive definite.
pub fn update(
    prior: &FilterState,
    stats: &InnovationStats,
    z: &DVector<f64>,
) -> Result<FilterState> {
    let (t, mean) = gain_and_mean(prior, stats, z)?;
    let factor = match chol_downdate(&prior.factor, &t) {
        Ok(f) if f.is_positive_definite() => f,
        Ok(_) | Err(Error::IndefiniteDowndate { .. }) => return Err(Error::FilterNumericalFailure),
        Err(e) => return Err(e),
    };
    Ok(FilterState { mean, factor })
}

/// Same update as [`update`] but with the covariance formed densely and
/// re-factored; used when the downdate path fails.
pub fn update_dense(
    prior: &FilterState,
    stats: &InnovationStats,
    z: &DVector<f64>,
) -> Result<FilterState> {
    let (t, mean) = gain_and_mean(prior, stats, z)?;
    let sigma = prior.factor.covariance() - &t * t.transpose();
    let factor = refactor_with_jitter(&sigma).ok_or(Error::FilterNumericalFailure)?;
    Ok(FilterState { mean, factor })
}

fn gain_and_mean(
    prior: &FilterState,
    stats: &InnovationStats,
    z: &DVector<f64>,
) -> Result<(DMatrix<f64>, StateVector)> {
    if z.len() != stats.z_pred.len() || stats.cross.ncols() != z.len() {
        return Err(Error::Dimension("update"));
    }
    let t = solve_upper_multi(&stats.uz, &stats.cross)?;
    let y = solve_lower_vec(&stats.uz.lower(), &(z - &stats.z_pred))?;
    let dx = &t * y;
    let mean = prior.mean + StateVector::from_fn(|i, _| dx[i]);
    Ok((t, mean))
}

/// Cholesky of a symmetric matrix, adding growing diagonal jitter when the
/// plain factorization fails.
pub(crate) fn refactor_with_jitter(sigma: &DMatrix<f64>) -> Option<UpperCholesky> {
    if let Some(f) = UpperCholesky::from_covariance(sigma) {
        if f.is_positive_definite() {
            return Some(f);
        }
    }
    let n = sigma.nrows();
    let scale = (0..n)
        .map(|i| sigma[(i, i)].abs())
        .fold(0.0_f64, f64::max)
        .max(1e-12);
    let mut jitter = scale * 1e-12;
    for _ in 0..12 {
        let s = sigma + DMatrix::identity(n, n) * jitter;
        if let Some(f) = UpperCholesky::from_covariance(&s) {
            if f.is_positive_definite() {
                return Some(f);
            }
        }
        jitter *= 10.0;
    }
    None
}

/// Result of one unconstrained step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutcome {
    pub state: FilterState,
    /// True when the downdate failed and the dense update was used.
    pub dense_fallback: bool,
}

/// Predict, then update with the ranges of links reported LOS.
///
/// With no reported-LOS link the prediction is returned unchanged.
pub fn step_unconstrained(
    state: &FilterState,
    model: &MotionModel,
    frame: &MeasurementFrame,
    eta_alpha: f64,
) -> Result<StepOutcome> {
    let prior = predict(state, model)?;
    let (anchors, ranges): (Vec<Position>, Vec<f64>) = frame
        .reported(LinkLabel::Los)
        .map(|l| (l.anchor.position, l.range))
        .unzip();
    if anchors.is_empty() {
        return Ok(StepOutcome {
            state: prior,
            dense_fallback: false,
        });
    }
    let sig = gen_sigma(&prior.mean, &prior.factor, eta_alpha)?;
    let stats = measurement_stats(&sig, &anchors, frame.sigma_n)?;
    let z = DVector::from_vec(ranges);
    match update(&prior, &stats, &z) {
        Ok(state) => Ok(StepOutcome {
            state,
            dense_fallback: false,
        }),
        Err(Error::FilterNumericalFailure) => Ok(StepOutcome {
            state: update_dense(&prior, &stats, &z)?,
            dense_fallback: true,
        }),
        Err(e) => Err(e),
    }
}
