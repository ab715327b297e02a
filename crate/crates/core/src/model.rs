//! Motion and TOA measurement models, plus the generators that sample them.

use alloc::vec::Vec;

use nalgebra::{Matrix2, Matrix4, Matrix4x2, Vector2, Vector4};
use rand::Rng;
use rand_distr::{Distribution, Exp, StandardNormal};

use crate::error::{Error, Result};

/// `[x, y, vx, vy]` in meters and meters per second.
pub type StateVector = Vector4<f64>;
/// Planar position in meters.
pub type Position = Vector2<f64>;

pub fn position(s: &StateVector) -> Position {
    Position::new(s[0], s[1])
}

/// Nearly-constant-velocity model `s_k = F s_{k-1} + G w_{k-1}`, `w ~ N(0, σ_w² I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionModel {
    pub(crate) dt: f64,
    pub(crate) sigma_w2: f64,
    pub(crate) f: Matrix4<f64>,
    pub(crate) g: Matrix4x2<f64>,
    pub(crate) q: Matrix2<f64>,
}

impl MotionModel {
    pub fn new(dt: f64, sigma_w2: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) || !(sigma_w2 > 0.0 && sigma_w2.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "motion model needs dt > 0 and sigma_w2 > 0 (got {dt}, {sigma_w2})"
            )));
        }
        let half = dt * dt / 2.0;
        #[rustfmt::skip]
        let f = Matrix4::new(
            1.0, 0.0, dt, 0.0,
            0.0, 1.0, 0.0, dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let g = Matrix4x2::new(
            half, 0.0,
            0.0, half,
            dt, 0.0,
            0.0, dt,
        );
        Ok(Self {
            dt,
            sigma_w2,
            f,
            g,
            q: Matrix2::identity() * sigma_w2,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn sigma_w2(&self) -> f64 {
        self.sigma_w2
    }

    pub fn transition(&self) -> &Matrix4<f64> {
        &self.f
    }

    pub fn noise_input(&self) -> &Matrix4x2<f64> {
        &self.g
    }

    pub fn process_noise(&self) -> &Matrix2<f64> {
        &self.q
    }

    /// `Q^{1/2}`; `Q` is diagonal so the root is taken entrywise.
    pub fn process_noise_sqrt(&self) -> Matrix2<f64> {
        self.q.map(libm::sqrt)
    }

    /// Dense `F Σ Fᵀ + G Q Gᵀ`.
    pub fn propagate_covariance(&self, sigma: &Matrix4<f64>) -> Matrix4<f64> {
        self.f * sigma * self.f.transpose() + self.g * self.q * self.g.transpose()
    }
}

/// `make_motion`: the model for step `dt` and acceleration variance `sigma_w2`.
pub fn make_motion(dt: f64, sigma_w2: f64) -> Result<MotionModel> {
    MotionModel::new(dt, sigma_w2)
}

/// A reference node at a known position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Anchor {
    pub id: usize,
    pub position: Position,
}

impl Anchor {
    pub fn new(id: usize, x: f64, y: f64) -> Self {
        Self {
            id,
            position: Position::new(x, y),
        }
    }
}

/// Checks id uniqueness and finiteness of an anchor set.
pub fn validate_anchors(anchors: &[Anchor]) -> Result<()> {
    if anchors.is_empty() {
        return Err(Error::InvalidParameter(
            "at least one anchor is required".into(),
        ));
    }
    for (i, a) in anchors.iter().enumerate() {
        if !a.position.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidParameter(alloc::format!(
                "anchor {} is not finite",
                a.id
            )));
        }
        if anchors[..i].iter().any(|b| b.id == a.id) {
            return Err(Error::InvalidParameter(alloc::format!(
                "duplicate anchor id {}",
                a.id
            )));
        }
    }
    Ok(())
}

/// `h^i(s) = ‖x − a^i‖`.
pub fn range_truth(x: &Position, anchor: &Anchor) -> f64 {
    (x - anchor.position).norm()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LinkLabel {
    Los,
    Nlos,
}

/// One anchor's contribution to an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Link {
    pub anchor: Anchor,
    pub range: f64,
    pub true_label: LinkLabel,
    pub reported_label: LinkLabel,
}

/// All ranges of one epoch with their true and reported LOS/NLOS labels.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasurementFrame {
    pub epoch: usize,
    pub sigma_n: f64,
    pub links: Vec<Link>,
}

impl MeasurementFrame {
    pub fn reported(&self, label: LinkLabel) -> impl Iterator<Item = &Link> + '_ {
        self.links.iter().filter(move |l| l.reported_label == label)
    }

    /// Number of links reported LOS, `|L_k|`.
    pub fn los_count(&self) -> usize {
        self.reported(LinkLabel::Los).count()
    }
}

/// Distribution of the positive NLOS range bias.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BiasModel {
    Exponential {
        mean: f64,
    },
    /// Normal(mean, std) conditioned on being non-negative (sampled by rejection).
    ShiftedGaussian {
        mean: f64,
        std: f64,
    },
    Uniform {
        lower: f64,
        upper: f64,
    },
}

impl BiasModel {
    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            BiasModel::Exponential { mean } => mean >= 0.0 && mean.is_finite(),
            BiasModel::ShiftedGaussian { mean, std } => {
                std > 0.0 && std.is_finite() && mean.is_finite() && mean / std > -30.0
            }
            BiasModel::Uniform { lower, upper } => {
                lower >= 0.0 && upper >= lower && upper.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(alloc::format!(
                "invalid bias model {self:?}"
            )))
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            BiasModel::Exponential { mean } => {
                if mean == 0.0 {
                    0.0
                } else {
                    Exp::new(1.0 / mean).map(|d| d.sample(rng)).unwrap_or(0.0)
                }
            }
            BiasModel::ShiftedGaussian { mean, std } => loop {
                let z: f64 = StandardNormal.sample(rng);
                let b = mean + std * z;
                if b >= 0.0 {
                    break b;
                }
            },
            BiasModel::Uniform { lower, upper } => {
                if upper > lower {
                    rng.random_range(lower..upper)
                } else {
                    lower
                }
            }
        }
    }

    /// Analytic mean of the sampled bias.
    pub fn mean(&self) -> f64 {
        match *self {
            BiasModel::Exponential { mean } => mean,
            BiasModel::ShiftedGaussian { mean, std } => {
                let (_, lambda) = truncation_terms(mean, std);
                mean + std * lambda
            }
            BiasModel::Uniform { lower, upper } => 0.5 * (lower + upper),
        }
    }

    /// Analytic variance of the sampled bias.
    pub fn variance(&self) -> f64 {
        match *self {
            BiasModel::Exponential { mean } => mean * mean,
            BiasModel::ShiftedGaussian { mean, std } => {
                let (alpha, lambda) = truncation_terms(mean, std);
                std * std * (1.0 + alpha * lambda - lambda * lambda)
            }
            BiasModel::Uniform { lower, upper } => (upper - lower) * (upper - lower) / 12.0,
        }
    }
}

// Normal truncated to [0, ∞): alpha = -μ/σ and the inverse Mills ratio at alpha.
fn truncation_terms(mean: f64, std: f64) -> (f64, f64) {
    let alpha = -mean / std;
    let pdf = libm::exp(-0.5 * alpha * alpha) / libm::sqrt(2.0 * core::f64::consts::PI);
    let tail = 0.5 * libm::erfc(alpha / core::f64::consts::SQRT_2);
    (alpha, pdf / tail)
}

/// Ground-truth states `states[0..K]`, with `states[0] = s0`.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub states: Vec<StateVector>,
}

pub(crate) fn sample_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Propagates `s0` through the motion model for `steps` states.
pub fn simulate_trajectory<R: Rng + ?Sized>(
    model: &MotionModel,
    s0: StateVector,
    steps: usize,
    rng: &mut R,
) -> Result<TruthTrajectory> {
    if steps == 0 {
        return Err(Error::InvalidParameter(
            "trajectory needs at least one state".into(),
        ));
    }
    let sw = libm::sqrt(model.sigma_w2);
    let mut states = Vec::with_capacity(steps);
    states.push(s0);
    for k in 1..steps {
        let w = Vector2::new(sw * sample_normal(rng), sw * sample_normal(rng));
        states.push(model.f * states[k - 1] + model.g * w);
    }
    Ok(TruthTrajectory { states })
}

/// Samples one epoch of ranges: LOS links carry noise only, NLOS links noise plus bias.
///
/// Noise and bias come from separate streams so that changing the bias model
/// leaves the noise sequence untouched. Ranges are clipped at zero.
#[allow(clippy::too_many_arguments)]
pub fn measure_frame<R1: Rng + ?Sized, R2: Rng + ?Sized>(
    epoch: usize,
    x: &Position,
    anchors: &[Anchor],
    nlos_ids: &[usize],
    sigma_n: f64,
    bias: &BiasModel,
    noise_rng: &mut R1,
    bias_rng: &mut R2,
) -> Result<MeasurementFrame> {
    if let Some(id) = nlos_ids
        .iter()
        .find(|id| !anchors.iter().any(|a| a.id == **id))
    {
        return Err(Error::InvalidParameter(alloc::format!(
            "NLOS id {id} is not an anchor"
        )));
    }
    let links = anchors
        .iter()
        .map(|a| {
            let nlos = nlos_ids.contains(&a.id);
            let noise: f64 = StandardNormal.sample(noise_rng);
            let b = if nlos { bias.sample(bias_rng) } else { 0.0 };
            let label = if nlos {
                LinkLabel::Nlos
            } else {
                LinkLabel::Los
            };
            Link {
                anchor: *a,
                range: (range_truth(x, a) + b + sigma_n * noise).max(0.0),
                true_label: label,
                reported_label: label,
            }
        })
        .collect();
    Ok(MeasurementFrame {
        epoch,
        sigma_n,
        links,
    })
}

/// Flips reported labels: false alarms (true LOS reported NLOS) and missed
/// detections (true NLOS reported LOS).
pub fn corrupt_labels(
    frame: &MeasurementFrame,
    fa_ids: &[usize],
    md_ids: &[usize],
) -> Result<MeasurementFrame> {
    let check = |ids: &[usize], want: LinkLabel, what: &str| -> Result<()> {
        for id in ids {
            match frame.links.iter().find(|l| l.anchor.id == *id) {
                Some(l) if l.true_label == want => {}
                _ => {
                    return Err(Error::InvalidParameter(alloc::format!(
                        "{what} id {id} must name a true-{want:?} link"
                    )))
                }
            }
        }
        Ok(())
    };
    check(fa_ids, LinkLabel::Los, "false-alarm")?;
    check(md_ids, LinkLabel::Nlos, "missed-detection")?;

    let mut out = frame.clone();
    for link in &mut out.links {
        if fa_ids.contains(&link.anchor.id) {
            link.reported_label = LinkLabel::Nlos;
        } else if md_ids.contains(&link.anchor.id) {
            link.reported_label = LinkLabel::Los;
        }
    }
    Ok(out)
}
