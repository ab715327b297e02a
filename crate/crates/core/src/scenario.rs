//! Scenario description and the per-trial Monte-Carlo runner.
//!
//! Every random draw of a trial comes from its own ChaCha stream, keyed by
//! the run seed, the trial id and a purpose, so trials can run in any order
//! and adding a filter never shifts the data the others see.

use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::baseline::SekfParams;
use crate::chi2::eta_from_alpha;
use crate::error::{Error, Result};
use crate::filters::{FilterKind, FilterParams, Tracker};
use crate::linalg::UpperCholesky;
use crate::model::{
    corrupt_labels, measure_frame, position, sample_normal, simulate_trajectory, validate_anchors,
    Anchor, BiasModel, MeasurementFrame, MotionModel, StateVector,
};
use crate::srukf::{FilterState, STATE_DIM};

/// Smallest confidence for which `η_α > N` holds with `N = 4`.
pub const MIN_ALPHA: f64 = 0.6;

/// Everything that defines one experiment.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub name: alloc::string::String,
    pub anchors: Vec<Anchor>,
    pub dt: f64,
    pub sigma_w2: f64,
    pub sigma_n: f64,
    pub bias: BiasModel,
    pub steps: usize,
    pub trials: usize,
    pub nlos_ids: Vec<usize>,
    pub fa_ids: Vec<usize>,
    pub md_ids: Vec<usize>,
    pub seed: u64,
    pub alpha: f64,
    pub epsilon: f64,
    pub sekf: SekfParams,
    /// Standard deviations of the estimator's initial error.
    pub init_std: [f64; 4],
    pub divergence: DivergenceRule,
}

/// When a filter's trial is flagged diverged.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DivergenceRule {
    /// Estimate norm beyond which the filter has blown up (m).
    pub norm_limit: f64,
    /// Position error beyond which the track is considered lost (m).
    /// `None` disables the check.
    pub lost_track: Option<f64>,
}

impl Default for DivergenceRule {
    fn default() -> Self {
        Self {
            norm_limit: 1e9,
            lost_track: None,
        }
    }
}

impl ScenarioSpec {
    /// Square arena with anchors at the corners and the reported defaults;
    /// the lowest `4 - los` anchor ids are NLOS.
    pub fn square(name: &str, sigma_n: f64, los: usize) -> Self {
        let anchors = alloc::vec![
            Anchor::new(1, 0.0, 0.0),
            Anchor::new(2, 0.0, 1000.0),
            Anchor::new(3, 1000.0, 1000.0),
            Anchor::new(4, 1000.0, 0.0)
        ];
        let nlos = anchors.len().saturating_sub(los);
        Self {
            name: name.into(),
            nlos_ids: anchors.iter().take(nlos).map(|a| a.id).collect(),
            anchors,
            dt: 0.2,
            sigma_w2: 0.04,
            sigma_n,
            bias: BiasModel::Exponential { mean: 500.0 },
            steps: 500,
            trials: 100,
            fa_ids: Vec::new(),
            md_ids: Vec::new(),
            seed: 1,
            alpha: 0.70,
            epsilon: 3.0,
            sekf: SekfParams::default(),
            init_std: [100.0, 100.0, 10.0, 10.0],
            divergence: DivergenceRule::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: alloc::string::String| Err(Error::InvalidParameter(msg));
        validate_anchors(&self.anchors)?;
        MotionModel::new(self.dt, self.sigma_w2)?;
        self.bias.validate()?;
        if !(self.sigma_n > 0.0 && self.sigma_n.is_finite()) {
            return bad(alloc::format!(
                "sigma_n must be positive, got {}",
                self.sigma_n
            ));
        }
        if !(self.alpha > MIN_ALPHA && self.alpha < 1.0) {
            return bad(alloc::format!(
                "alpha must lie in (0.6, 1), got {}",
                self.alpha
            ));
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad(alloc::format!(
                "epsilon must be non-negative, got {}",
                self.epsilon
            ));
        }
        if self.steps == 0 || self.trials == 0 {
            return bad("steps and trials must be positive".into());
        }
        if !self.init_std.iter().all(|v| *v >= 0.0 && v.is_finite()) {
            return bad("init_std entries must be non-negative".into());
        }
        if !(self.sekf.scale >= 1.0 && self.sekf.smoother_q_scale > 0.0) {
            return bad("sekf scale must be >= 1 and smoother_q_scale > 0".into());
        }
        if !(self.divergence.norm_limit > 0.0)
            || self.divergence.lost_track.is_some_and(|v| !(v > 0.0))
        {
            return bad("divergence thresholds must be positive".into());
        }
        let known = |id: &usize| self.anchors.iter().any(|a| a.id == *id);
        for id in self.nlos_ids.iter().chain(&self.fa_ids).chain(&self.md_ids) {
            if !known(id) {
                return bad(alloc::format!("id {id} is not an anchor"));
            }
        }
        if let Some(id) = self.fa_ids.iter().find(|id| self.nlos_ids.contains(id)) {
            return bad(alloc::format!("false-alarm id {id} must be a LOS anchor"));
        }
        if let Some(id) = self.md_ids.iter().find(|id| !self.nlos_ids.contains(id)) {
            return bad(alloc::format!(
                "missed-detection id {id} must be an NLOS anchor"
            ));
        }
        Ok(())
    }

    pub fn motion(&self) -> Result<MotionModel> {
        MotionModel::new(self.dt, self.sigma_w2)
    }

    pub fn filter_params(&self) -> Result<FilterParams> {
        Ok(FilterParams {
            eta_alpha: eta_from_alpha(self.alpha, STATE_DIM)?,
            epsilon: self.epsilon,
            sekf: self.sekf,
            bias_mean: self.bias.mean(),
            bias_var: self.bias.variance(),
        })
    }
}

/// What a random stream is used for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Trajectory = 0,
    Noise = 1,
    Bias = 2,
    Init = 3,
}

/// Independent stream for `(seed, trial, purpose)`.
pub fn stream_rng(seed: u64, trial: usize, purpose: Purpose) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(trial as u64 * 8 + purpose as u64);
    rng
}

/// Truth start: position uniform over the anchors' bounding box, velocity N(0, I).
pub fn initial_truth<R: Rng + ?Sized>(anchors: &[Anchor], rng: &mut R) -> StateVector {
    let (mut lo, mut hi) = (anchors[0].position, anchors[0].position);
    for a in anchors {
        lo = lo.inf(&a.position);
        hi = hi.sup(&a.position);
    }
    let mut pick = |a: f64, b: f64| if b > a { rng.random_range(a..b) } else { a };
    let x = pick(lo[0], hi[0]);
    let y = pick(lo[1], hi[1]);
    StateVector::new(x, y, sample_normal(rng), sample_normal(rng))
}

/// Estimator start: mean drawn around the truth with the given per-axis
/// standard deviations, factor `diag(std)`.
pub fn initialize_estimator<R: Rng + ?Sized>(
    s0: &StateVector,
    std: &[f64; 4],
    rng: &mut R,
) -> Result<FilterState> {
    let mean = StateVector::from_fn(|i, _| s0[i] + std[i] * sample_normal(rng));
    // a zero spread is kept usable as a filter factor
    let diag: Vec<f64> = std.iter().map(|s| s.max(1e-12)).collect();
    FilterState::new(mean, UpperCholesky::from_diagonal(&diag)?)
}

/// Data of one trial: `steps + 1` truth states and `steps` frames (epochs 1..=K).
#[derive(Debug, Clone, PartialEq)]
pub struct TrialData {
    pub trial: usize,
    pub truth: Vec<StateVector>,
    pub frames: Vec<MeasurementFrame>,
    pub init: FilterState,
}

pub fn generate_trial(spec: &ScenarioSpec, trial: usize) -> Result<TrialData> {
    let model = spec.motion()?;
    let mut traj_rng = stream_rng(spec.seed, trial, Purpose::Trajectory);
    let mut noise_rng = stream_rng(spec.seed, trial, Purpose::Noise);
    let mut bias_rng = stream_rng(spec.seed, trial, Purpose::Bias);
    let mut init_rng = stream_rng(spec.seed, trial, Purpose::Init);

    let s0 = initial_truth(&spec.anchors, &mut traj_rng);
    let truth = simulate_trajectory(&model, s0, spec.steps + 1, &mut traj_rng)?.states;
    let mut frames = Vec::with_capacity(spec.steps);
    for (k, s) in truth.iter().enumerate().skip(1) {
        let f = measure_frame(
            k,
            &position(s),
            &spec.anchors,
            &spec.nlos_ids,
            spec.sigma_n,
            &spec.bias,
            &mut noise_rng,
            &mut bias_rng,
        )?;
        frames.push(corrupt_labels(&f, &spec.fa_ids, &spec.md_ids)?);
    }
    let init = initialize_estimator(&s0, &spec.init_std, &mut init_rng)?;
    Ok(TrialData {
        trial,
        truth,
        frames,
        init,
    })
}

/// One filter's run over a trial.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub kind: FilterKind,
    /// Posterior mean after each epoch, `K` entries.
    pub estimates: Vec<StateVector>,
    pub diverged: bool,
    /// First epoch at which divergence was flagged.
    pub diverged_at: Option<usize>,
    /// Sigma points moved per epoch.
    pub projected: Vec<u8>,
    pub infeasible_skips: Vec<bool>,
    /// Disc violation of the constrained mean, for epochs where projection ran.
    pub mean_violation: Vec<Option<f64>>,
    pub dense_fallbacks: usize,
    /// Step error that stopped the filter, if any.
    pub failure: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub trial: usize,
    /// Truth at epochs `1..=K`.
    pub truth: Vec<StateVector>,
    pub frames: Vec<MeasurementFrame>,
    pub traces: Vec<FilterTrace>,
}

impl TrialRecord {
    pub fn trace(&self, kind: FilterKind) -> Option<&FilterTrace> {
        self.traces.iter().find(|t| t.kind == kind)
    }
}

/// Runs every filter over the same trial data.
///
/// A filter that blows up is flagged and keeps running; one whose step fails
/// outright holds its last estimate for the remaining epochs.
pub fn run_trial(spec: &ScenarioSpec, trial: usize, filters: &[FilterKind]) -> Result<TrialRecord> {
    let data = generate_trial(spec, trial)?;
    let model = spec.motion()?;
    let params = spec.filter_params()?;
    let truth: Vec<StateVector> = data.truth[1..].to_vec();
    let k = spec.steps;
    let traces = filters
        .iter()
        .map(|&kind| {
            let mut tracker = Tracker::new(kind, &data.init);
            let mut trace = FilterTrace {
                kind,
                estimates: Vec::with_capacity(k),
                diverged: false,
                diverged_at: None,
                projected: Vec::with_capacity(k),
                infeasible_skips: Vec::with_capacity(k),
                mean_violation: Vec::with_capacity(k),
                dense_fallbacks: 0,
                failure: None,
            };
            for (frame, s) in data.frames.iter().zip(&truth) {
                let report = if trace.failure.is_none() {
                    match tracker.step(&model, frame, &params) {
                        Ok(r) => Some(r),
                        Err(e) => {
                            trace.failure = Some(e);
                            None
                        }
                    }
                } else {
                    None
                };
                let r = report.unwrap_or_default();
                let mean = tracker.mean();
                let err = (position(&mean) - position(s)).norm();
                let blown =
                    !mean.iter().all(|v| v.is_finite()) || mean.norm() > spec.divergence.norm_limit;
                let lost = spec.divergence.lost_track.is_some_and(|lim| !(err <= lim));
                if (blown || lost || trace.failure.is_some()) && !trace.diverged {
                    trace.diverged = true;
                    trace.diverged_at = Some(frame.epoch);
                }
                trace.estimates.push(mean);
                trace
                    .projected
                    .push(r.projected.min(u8::MAX as usize) as u8);
                trace.infeasible_skips.push(r.infeasible_skip);
                trace.mean_violation.push(r.mean_violation);
                trace.dense_fallbacks += usize::from(r.dense_fallback);
            }
            trace
        })
        .collect();
    Ok(TrialRecord {
        trial,
        truth,
        frames: data.frames,
        traces,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LinkLabel;

    fn small(los: usize) -> ScenarioSpec {
        let mut s = ScenarioSpec::square("t", 10.0, los);
        s.steps = 40;
        s.trials = 2;
        s
    }

    #[test]
    fn default_nlos_ids_are_lowest() {
        assert_eq!(
            ScenarioSpec::square("a", 10.0, 1).nlos_ids,
            alloc::vec![1, 2, 3]
        );
        assert_eq!(
            ScenarioSpec::square("a", 10.0, 2).nlos_ids,
            alloc::vec![1, 2]
        );
        assert!(ScenarioSpec::square("a", 10.0, 4).nlos_ids.is_empty());
    }

    #[test]
    fn validation_rejects_bad_settings() {
        let mut s = small(1);
        assert!(s.validate().is_ok());
        s.alpha = 0.6;
        assert!(s.validate().is_err());
        s.alpha = 0.7;
        s.epsilon = -0.1;
        assert!(s.validate().is_err());
        s.epsilon = 3.0;
        s.fa_ids = alloc::vec![1];
        assert!(s.validate().is_err());
        s.fa_ids = alloc::vec![4];
        assert!(s.validate().is_ok());
        s.md_ids = alloc::vec![4];
        assert!(s.validate().is_err());
    }

    #[test]
    fn streams_are_distinct_and_reproducible() {
        let a: u64 = stream_rng(5, 0, Purpose::Noise).random();
        let b: u64 = stream_rng(5, 0, Purpose::Noise).random();
        let c: u64 = stream_rng(5, 0, Purpose::Bias).random();
        let d: u64 = stream_rng(5, 1, Purpose::Noise).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn estimator_initialization_moments() {
        let s0 = StateVector::new(1.0, 2.0, 3.0, 4.0);
        let std = [100.0, 100.0, 10.0, 10.0];
        let mut rng = stream_rng(9, 0, Purpose::Init);
        let n = 100_000;
        let draws: Vec<StateVector> = (0..n)
            .map(|_| initialize_estimator(&s0, &std, &mut rng).unwrap().mean - s0)
            .collect();
        for i in 0..4 {
            let var = draws.iter().map(|d| d[i] * d[i]).sum::<f64>() / n as f64;
            assert!((var / (std[i] * std[i]) - 1.0).abs() < 0.03);
        }
        let f = initialize_estimator(&s0, &std, &mut rng).unwrap();
        assert_eq!(f.factor.diagonal().as_slice(), &std);
        let zero = initialize_estimator(&s0, &[0.0; 4], &mut rng).unwrap();
        assert_eq!(zero.mean, s0);
    }

    #[test]
    fn truth_starts_in_arena() {
        let spec = small(1);
        for t in 0..50 {
            let d = generate_trial(&spec, t).unwrap();
            let p = position(&d.truth[0]);
            assert!((0.0..=1000.0).contains(&p[0]) && (0.0..=1000.0).contains(&p[1]));
            assert_eq!(d.truth.len(), spec.steps + 1);
            assert_eq!(d.frames.len(), spec.steps);
            assert_eq!(d.frames[0].epoch, 1);
        }
    }

    #[test]
    fn false_alarm_ids_are_reported_nlos() {
        let mut spec = small(1);
        spec.fa_ids = alloc::vec![4];
        let d = generate_trial(&spec, 0).unwrap();
        assert!(d.frames.iter().all(|f| f.los_count() == 0));
        assert!(d
            .frames
            .iter()
            .all(|f| f.links[3].true_label == LinkLabel::Los));
    }

    #[test]
    fn minimal_trial() {
        let mut spec = small(2);
        spec.steps = 1;
        spec.trials = 1;
        let r = run_trial(&spec, 0, &FilterKind::ALL).unwrap();
        assert_eq!(r.truth.len(), 1);
        assert!(r.traces.iter().all(|t| t.estimates.len() == 1));
    }

    #[test]
    fn trials_are_deterministic_and_filters_share_data() {
        let spec = small(1);
        let a = run_trial(&spec, 1, &FilterKind::ALL).unwrap();
        let b = run_trial(&spec, 1, &[FilterKind::Csrukf]).unwrap();
        assert_eq!(a.frames, b.frames);
        assert_eq!(a.trace(FilterKind::Csrukf), b.trace(FilterKind::Csrukf));
        assert_eq!(a, run_trial(&spec, 1, &FilterKind::ALL).unwrap());
    }

    #[test]
    fn no_nlos_links_makes_constraints_inert() {
        let spec = small(4);
        let r = run_trial(&spec, 0, &[FilterKind::Csrukf, FilterKind::Srukf]).unwrap();
        assert_eq!(r.traces[0].estimates, r.traces[1].estimates);
    }
}
