//! Disc constraints from NLOS ranges and sigma-point projection.
//!
//! A range on an NLOS link is biased upward, so the true position lies inside
//! the disc of that radius around the anchor. Sigma points outside the
//! intersection are moved to the closest feasible point in the metric of the
//! current covariance, after which the mean and factor are re-estimated from
//! the projected set.

use alloc::vec::Vec;

use nalgebra::{DMatrix, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::linalg::{qr_factor, UpperCholesky};
use crate::model::{position, LinkLabel, MeasurementFrame, MotionModel, Position, StateVector};
use crate::qcqp::{solve_qcqp2, QcqpSolution};
use crate::srukf::{gen_sigma, step_unconstrained, FilterState, STATE_DIM};

/// Slack below which a point on a disc boundary counts as feasible.
pub const VIOLATION_SLACK: f64 = 1e-9;
/// Ratio of L11 diagonals below which the position block is regularized.
pub const DEGENERATE_RATIO: f64 = 1e-10;
/// Diagonal load added to the position covariance block when degenerate.
pub const DEGENERATE_LOAD: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Disc {
    pub anchor_id: usize,
    pub center: Position,
    pub radius: f64,
}

/// Intersection of discs; empty list means unconstrained.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DiscRegion {
    pub discs: Vec<Disc>,
    pub epsilon: f64,
}

impl DiscRegion {
    pub fn is_empty(&self) -> bool {
        self.discs.is_empty()
    }

    /// Largest distance by which `x` lies outside any disc (0 if feasible).
    pub fn max_violation(&self, x: &Position) -> f64 {
        self.discs
            .iter()
            .map(|d| (x - d.center).norm() - d.radius)
            .fold(0.0, f64::max)
    }
}

/// One disc per reported-NLOS link with radius `r + ε·σ_n`.
pub fn build_region(frame: &MeasurementFrame, epsilon: f64) -> Result<DiscRegion> {
    if !(epsilon >= 0.0 && epsilon.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!(
            "epsilon must be non-negative, got {epsilon}"
        )));
    }
    let discs = frame
        .reported(LinkLabel::Nlos)
        .map(|l| Disc {
            anchor_id: l.anchor.id,
            center: l.anchor.position,
            radius: l.range + epsilon * frame.sigma_n,
        })
        .collect();
    Ok(DiscRegion { discs, epsilon })
}

/// True iff `x` is within `tol` of every disc.
pub fn is_feasible(x: &Position, region: &DiscRegion, tol: f64) -> bool {
    region
        .discs
        .iter()
        .all(|d| (x - d.center).norm() <= d.radius + tol)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionResult {
    pub point: StateVector,
    /// Whether the point was moved.
    pub active: bool,
    pub iterations: usize,
}

/// Lower factor `L = Uᵀ` used for projection, with the position block loaded
/// when its diagonal is too lopsided for the change of variables.
pub fn projection_lower(factor: &UpperCholesky) -> Result<DMatrix<f64>> {
    if factor.dim() != STATE_DIM {
        return Err(Error::Dimension("projection factor"));
    }
    let l = factor.lower();
    let (d0, d1) = (l[(0, 0)].abs(), l[(1, 1)].abs());
    if d0.min(d1) >= DEGENERATE_RATIO * d0.max(d1) && d0.max(d1) > 0.0 {
        return Ok(l);
    }
    let mut sigma = factor.covariance();
    sigma[(0, 0)] += DEGENERATE_LOAD;
    sigma[(1, 1)] += DEGENERATE_LOAD;
    crate::srukf::refactor_with_jitter(&sigma)
        .map(|u| u.lower())
        .ok_or(Error::FilterNumericalFailure)
}

/// Projects one state onto the region in the metric of `UᵀU`.
pub fn project_sigma(
    point: &StateVector,
    factor: &UpperCholesky,
    region: &DiscRegion,
) -> Result<ProjectionResult> {
    if region.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if is_feasible(&position(point), region, VIOLATION_SLACK) {
        return Ok(ProjectionResult {
            point: *point,
            active: false,
            iterations: 0,
        });
    }
    project_with_lower(point, &projection_lower(factor)?, region)
}

fn project_with_lower(
    point: &StateVector,
    l: &DMatrix<f64>,
    region: &DiscRegion,
) -> Result<ProjectionResult> {
    if is_feasible(&position(point), region, VIOLATION_SLACK) {
        return Ok(ProjectionResult {
            point: *point,
            active: false,
            iterations: 0,
        });
    }
    let l11 = Matrix2::new(l[(0, 0)], 0.0, l[(1, 0)], l[(1, 1)]);
    let p = position(point);
    let targets: Vec<(Vector2<f64>, f64)> = region
        .discs
        .iter()
        .map(|d| (p - d.center, d.radius))
        .collect();
    let QcqpSolution { u, iterations, .. } = solve_qcqp2(&l11, &targets)?;
    let mut q = *point;
    for i in 0..STATE_DIM {
        q[i] -= l[(i, 0)] * u[0] + l[(i, 1)] * u[1];
    }
    Ok(ProjectionResult {
        point: q,
        active: true,
        iterations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConstrainedUpdate {
    pub state: FilterState,
    /// Number of sigma points that were moved.
    pub projected: usize,
}

/// Regenerates sigma points from the posterior, projects the violating ones
/// and re-estimates mean and factor from the projected set.
///
/// Returns the input unchanged when the region is empty or nothing violates.
pub fn constrained_update(
    state: &FilterState,
    region: &DiscRegion,
    eta_alpha: f64,
) -> Result<ConstrainedUpdate> {
    let unchanged = || ConstrainedUpdate {
        state: state.clone(),
        projected: 0,
    };
    if region.is_empty() {
        return Ok(unchanged());
    }
    let sig = gen_sigma(&state.mean, &state.factor, eta_alpha)?;
    if sig
        .points
        .iter()
        .all(|p| is_feasible(&position(p), region, VIOLATION_SLACK))
    {
        return Ok(unchanged());
    }
    if let Some(&w) = sig.weights.iter().find(|&&w| w < 0.0) {
        return Err(Error::NegativeWeight(w));
    }
    let l = projection_lower(&state.factor)?;
    let mut projected = 0;
    let mut points = Vec::with_capacity(sig.points.len());
    for p in &sig.points {
        let r = project_with_lower(p, &l, region)?;
        projected += usize::from(r.active);
        points.push(r.point);
    }
    let mut mean = StateVector::zeros();
    for (p, w) in points.iter().zip(&sig.weights) {
        mean += p * *w;
    }
    let mut stack = DMatrix::zeros(points.len(), STATE_DIM);
    for (j, (p, w)) in points.iter().zip(&sig.weights).enumerate() {
        let sw = libm::sqrt(*w);
        for i in 0..STATE_DIM {
            stack[(j, i)] = sw * (p[i] - mean[i]);
        }
    }
    let factor = qr_factor(&stack)?;
    Ok(ConstrainedUpdate {
        state: FilterState::new(mean, factor)?,
        projected,
    })
}

/// Diagnostics of one constrained filter step.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrukfStep {
    pub state: FilterState,
    pub dense_fallback: bool,
    pub projected: usize,
    /// The region was certified empty and projection was skipped.
    pub infeasible_skip: bool,
    /// Largest disc violation of the output mean, when projection ran.
    pub mean_violation: Option<f64>,
}

/// Unconstrained square-root step followed by sigma-point projection.
///
/// An empty disc intersection (possible when labels are wrong) skips the
/// projection and keeps the unconstrained posterior.
pub fn csrukf_step(
    state: &FilterState,
    model: &MotionModel,
    frame: &MeasurementFrame,
    eta_alpha: f64,
    epsilon: f64,
) -> Result<CsrukfStep> {
    let base = step_unconstrained(state, model, frame, eta_alpha)?;
    let region = build_region(frame, epsilon)?;
    match constrained_update(&base.state, &region, eta_alpha) {
        Ok(c) => {
            let mean_violation =
                (c.projected > 0).then(|| region.max_violation(&position(&c.state.mean)));
            Ok(CsrukfStep {
                state: c.state,
                dense_fallback: base.dense_fallback,
                projected: c.projected,
                infeasible_skip: false,
                mean_violation,
            })
        }
        Err(Error::InfeasibleRegion(_)) => Ok(CsrukfStep {
            state: base.state,
            dense_fallback: base.dense_fallback,
            projected: 0,
            infeasible_skip: true,
            mean_violation: None,
        }),
        Err(e) => Err(e),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{make_motion, Anchor, Link};
    use nalgebra::{Matrix4, Vector4};
    use proptest::prelude::*;

    fn region(discs: &[(f64, f64, f64)]) -> DiscRegion {
        DiscRegion {
            discs: discs
                .iter()
                .enumerate()
                .map(|(i, &(x, y, r))| Disc {
                    anchor_id: i + 1,
                    center: Position::new(x, y),
                    radius: r,
                })
                .collect(),
            epsilon: 0.0,
        }
    }

    fn frame(links: &[(Anchor, f64, LinkLabel)], sigma_n: f64) -> MeasurementFrame {
        MeasurementFrame {
            epoch: 1,
            sigma_n,
            links: links
                .iter()
                .map(|&(anchor, range, l)| Link {
                    anchor,
                    range,
                    true_label: l,
                    reported_label: l,
                })
                .collect(),
        }
    }

    #[test]
    fn region_from_frame() {
        let a = Anchor::new(1, 0.0, 0.0);
        let b = Anchor::new(2, 0.0, 1000.0);
        assert!(
            build_region(&frame(&[(a, 100.0, LinkLabel::Los)], 10.0), 3.0)
                .unwrap()
                .is_empty()
        );
        let f = frame(
            &[(a, 100.0, LinkLabel::Nlos), (b, 50.0, LinkLabel::Los)],
            10.0,
        );
        let r = build_region(&f, 3.0).unwrap();
        assert_eq!(r.discs.len(), 1);
        assert_eq!(r.discs[0].radius, 130.0);
        assert_eq!(build_region(&f, 0.0).unwrap().discs[0].radius, 100.0);
        assert!(build_region(&f, -1.0).is_err());
    }

    #[test]
    fn feasibility_checks() {
        assert!(is_feasible(
            &Position::new(1e9, 1e9),
            &DiscRegion::default(),
            0.0
        ));
        let one = region(&[(5.0, 5.0, 1.0)]);
        assert!(is_feasible(&Position::new(5.0, 5.0), &one, 0.0));
        let two = region(&[(0.0, 0.0, 2.0), (4.0, 0.0, 2.0)]);
        assert!(is_feasible(&Position::new(2.0, 0.0), &two, 0.0));
        assert!(!is_feasible(&Position::new(2.0, 0.5), &two, 0.0));
    }

    #[test]
    fn radial_projection_with_identity_factor() {
        let r = project_sigma(
            &Vector4::new(3.0, 0.0, 7.0, -2.0),
            &UpperCholesky::identity(4),
            &region(&[(0.0, 0.0, 1.0)]),
        )
        .unwrap();
        assert!(r.active);
        assert!((r.point - Vector4::new(1.0, 0.0, 7.0, -2.0)).norm() < 1e-9);
    }

    #[test]
    fn feasible_point_untouched() {
        let s = Vector4::new(0.5, 0.0, 1.0, 1.0);
        let r =
            project_sigma(&s, &UpperCholesky::identity(4), &region(&[(0.0, 0.0, 1.0)])).unwrap();
        assert!(!r.active);
        assert_eq!(r.point, s);
        assert!(matches!(
            project_sigma(&s, &UpperCholesky::identity(4), &DiscRegion::default()),
            Err(Error::EmptyRegion)
        ));
    }

    #[test]
    fn tangent_pair_projects_to_touching_point() {
        let r = project_sigma(
            &Vector4::new(2.0, 5.0, 0.0, 0.0),
            &UpperCholesky::identity(4),
            &region(&[(0.0, 0.0, 2.0), (4.0, 0.0, 2.0)]),
        )
        .unwrap();
        assert!(
            (position(&r.point) - Position::new(2.0, 0.0)).norm() < 1e-6,
            "{:?}",
            r.point
        );
    }

    #[test]
    fn tangent_pair_matches_brute_force_grid() {
        // 1e-3 m grid over the bounding box of the lens
        let reg = region(&[(0.0, 0.0, 2.0), (4.0, 0.0, 2.0)]);
        let s = Position::new(2.0, 5.0);
        let mut best = (f64::INFINITY, Position::zeros());
        for i in 0..=4000 {
            for j in -2000..=2000 {
                let p = Position::new(i as f64 * 1e-3, j as f64 * 1e-3);
                if is_feasible(&p, &reg, 1e-12) {
                    let d = (p - s).norm_squared();
                    if d < best.0 {
                        best = (d, p);
                    }
                }
            }
        }
        assert!((best.1 - Position::new(2.0, 0.0)).norm() < 1e-3);
    }

    #[test]
    fn disjoint_region_reports_infeasible() {
        let r = project_sigma(
            &Vector4::new(50.0, 50.0, 0.0, 0.0),
            &UpperCholesky::identity(4),
            &region(&[(0.0, 0.0, 1.0), (10.0, 0.0, 1.0)]),
        );
        assert!(matches!(r, Err(Error::InfeasibleRegion(_))));
    }

    #[test]
    fn degenerate_position_block_is_regularized() {
        let u = UpperCholesky::from_diagonal(&[1.0, 1e-12, 1.0, 1.0]).unwrap();
        let r = project_sigma(
            &Vector4::new(3.0, 0.0, 0.0, 0.0),
            &u,
            &region(&[(0.0, 0.0, 1.0)]),
        )
        .unwrap();
        assert!(r.point.iter().all(|v| v.is_finite()));
        assert!(is_feasible(
            &position(&r.point),
            &region(&[(0.0, 0.0, 1.0)]),
            1e-6
        ));
    }

    #[test]
    fn constrained_update_identity_cases() {
        let st =
            FilterState::new(Vector4::new(1.0, 1.0, 0.0, 0.0), UpperCholesky::identity(4)).unwrap();
        let out = constrained_update(&st, &DiscRegion::default(), 4.8784).unwrap();
        assert_eq!(out.state, st);
        let wide = region(&[(0.0, 0.0, 100.0)]);
        let out = constrained_update(&st, &wide, 4.8784).unwrap();
        assert_eq!(out.projected, 0);
        assert_eq!(out.state, st);
    }

    #[test]
    fn tight_far_region_shrinks_covariance() {
        let st = FilterState::new(Vector4::zeros(), UpperCholesky::identity(4)).unwrap();
        let reg = region(&[(100.0, 0.0, 1.0)]);
        let out = constrained_update(&st, &reg, 4.8784).unwrap();
        assert_eq!(out.projected, 9);
        assert!(is_feasible(&position(&out.state.mean), &reg, 1e-6));
        assert!(out.state.covariance().trace() <= st.covariance().trace());
        let d = out.state.factor.diagonal();
        assert!(d.iter().all(|v| *v >= 0.0 && v.is_finite()));
    }

    #[test]
    fn projected_then_fixed_point() {
        let st = FilterState::new(
            Vector4::new(0.0, 0.0, 1.0, 1.0),
            UpperCholesky::from_diagonal(&[3.0, 2.0, 1.0, 1.0]).unwrap(),
        )
        .unwrap();
        let reg = region(&[(10.0, 0.0, 9.0), (0.0, 12.0, 13.0)]);
        let once = constrained_update(&st, &reg, 4.8784).unwrap();
        assert!(once.projected > 0);
        let twice = constrained_update(&once.state, &reg, 4.8784).unwrap();
        assert!(
            (twice.state.mean - once.state.mean).norm()
                <= 1e-6 + 0.5 * (once.state.mean - st.mean).norm()
        );
        // a state whose regenerated points are all feasible is a fixed point
        let inside = FilterState::new(
            Vector4::new(3.0, 3.0, 0.0, 0.0),
            UpperCholesky::from_diagonal(&[0.1; 4]).unwrap(),
        )
        .unwrap();
        assert_eq!(
            constrained_update(&inside, &reg, 4.8784).unwrap().state,
            inside
        );
    }

    #[test]
    fn csrukf_skips_contradictory_region() {
        let model = make_motion(0.2, 0.04).unwrap();
        let st = FilterState::new(
            Vector4::new(500.0, 500.0, 0.0, 0.0),
            UpperCholesky::from_diagonal(&[100.0, 100.0, 10.0, 10.0]).unwrap(),
        )
        .unwrap();
        let f = frame(
            &[
                (Anchor::new(1, 0.0, 0.0), 100.0, LinkLabel::Nlos),
                (Anchor::new(2, 1000.0, 1000.0), 100.0, LinkLabel::Nlos),
                (Anchor::new(3, 1000.0, 0.0), 710.0, LinkLabel::Los),
            ],
            10.0,
        );
        let out = csrukf_step(&st, &model, &f, 4.8784, 3.0).unwrap();
        assert!(out.infeasible_skip);
        assert_eq!(
            out.state,
            step_unconstrained(&st, &model, &f, 4.8784).unwrap().state
        );
    }

    #[test]
    fn csrukf_mean_respects_region() {
        let model = make_motion(0.2, 0.04).unwrap();
        let st = FilterState::new(
            Vector4::new(600.0, 600.0, 0.0, 0.0),
            UpperCholesky::from_diagonal(&[100.0, 100.0, 10.0, 10.0]).unwrap(),
        )
        .unwrap();
        let f = frame(
            &[
                (Anchor::new(1, 0.0, 0.0), 300.0, LinkLabel::Nlos),
                (Anchor::new(2, 0.0, 1000.0), 850.0, LinkLabel::Nlos),
                (Anchor::new(3, 1000.0, 1000.0), 1150.0, LinkLabel::Nlos),
            ],
            10.0,
        );
        let out = csrukf_step(&st, &model, &f, 4.8784, 3.0).unwrap();
        assert!(out.projected > 0);
        assert!(out.mean_violation.unwrap() <= 1e-6);
        let reg = build_region(&f, 3.0).unwrap();
        assert!(is_feasible(&position(&out.state.mean), &reg, 1e-6));
    }

    // Dense oracle for the weighted projection: for each candidate boundary
    // position p, the best velocity under W = Σ⁻¹ follows from the dense
    // blocks of W, and the objective is evaluated with the full 4×4 W.
    fn dense_oracle(s: &StateVector, sigma: &Matrix4<f64>, reg: &DiscRegion) -> f64 {
        let w = sigma.try_inverse().unwrap();
        let wvv = w.fixed_view::<2, 2>(2, 2).into_owned();
        let wvp = w.fixed_view::<2, 2>(2, 0).into_owned();
        let wvv_inv = wvv.try_inverse().unwrap();
        let cost = |p: &Position| {
            let dp = p - position(s);
            let dv = -(wvv_inv * wvp * dp);
            let d = Vector4::new(dp[0], dp[1], dv[0], dv[1]);
            (d.transpose() * w * d)[0]
        };
        let feasible = |p: &Position| is_feasible(p, reg, 1e-12);
        // an active projection lies on the boundary: scan each circle, then
        // zoom into the best feasible angle
        let mut best = f64::INFINITY;
        for d in &reg.discs {
            let at = |th: f64| d.center + Position::new(libm::cos(th), libm::sin(th)) * d.radius;
            let (mut lo, mut hi) = (0.0, core::f64::consts::TAU);
            let mut local = f64::INFINITY;
            for _ in 0..10 {
                let n = 4000;
                let step = (hi - lo) / n as f64;
                let mut arg = None;
                for a in 0..=n {
                    let th = lo + a as f64 * step;
                    let p = at(th);
                    if feasible(&p) && cost(&p) < local {
                        local = cost(&p);
                        arg = Some(th);
                    }
                }
                let Some(th) = arg else { break };
                lo = th - 2.0 * step;
                hi = th + 2.0 * step;
            }
            best = best.min(local);
        }
        best
    }

    prop_compose! {
        fn weighted_instance()(raw in proptest::collection::vec(-1.0..1.0_f64, 16),
                               spread in 1.0..50.0_f64,
                               sx in -300.0..300.0_f64, sy in -300.0..300.0_f64,
                               discs in proptest::collection::vec((-200.0..200.0_f64, -200.0..200.0_f64, 20.0..150.0_f64), 1..4))
                               -> (StateVector, UpperCholesky, DiscRegion) {
            let a = DMatrix::from_fn(4, 4, |i, j| raw[i * 4 + j]) + DMatrix::identity(4, 4) * 1.5;
            let u = UpperCholesky::from_covariance(&(a.tr_mul(&a) * (spread * spread))).unwrap();
            // grow every disc to cover the origin so the intersection is non-empty
            let reg = DiscRegion {
                discs: discs.iter().enumerate().map(|(i, &(x, y, r))| {
                    let c = Position::new(x, y);
                    Disc { anchor_id: i, center: c, radius: r.max(c.norm() * 1.001) }
                }).collect(),
                epsilon: 0.0,
            };
            (StateVector::new(sx, sy, 3.0, -1.0), u, reg)
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn matches_dense_weighted_oracle((s, u, reg) in weighted_instance()) {
            let r = project_sigma(&s, &u, &reg).unwrap();
            prop_assert!(is_feasible(&position(&r.point), &reg, 1e-6));
            let sigma = u.covariance();
            let sigma = Matrix4::from_fn(|i, j| sigma[(i, j)]);
            let d = r.point - s;
            let got = (d.transpose() * sigma.try_inverse().unwrap() * d)[0];
            if r.active {
                let oracle = dense_oracle(&s, &sigma, &reg);
                prop_assert!((got - oracle).abs() <= 1e-5 * (1.0 + oracle), "got {got} oracle {oracle}");
            } else {
                prop_assert_eq!(got, 0.0);
            }
        }

        #[test]
        fn constrained_mean_in_region((s, u, reg) in weighted_instance()) {
            let st = FilterState::new(s, u).unwrap();
            let out = constrained_update(&st, &reg, 4.8784).unwrap();
            prop_assert!(is_feasible(&position(&out.state.mean), &reg, 1e-6));
            prop_assert!(out.state.factor.diagonal().iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
    }
}
