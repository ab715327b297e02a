//! Minimum-norm point in a linearly mapped intersection of discs:
//!
//! ```text
//! minimize ‖u‖²  subject to  ‖L u − cᵢ‖ ≤ ρᵢ  for all i
//! ```
//!
//! with `L` a nonsingular 2×2 lower-triangular matrix. The main solver is a
//! log-barrier interior-point method on the squared constraints, started from
//! a phase-I point. Its answer is polished by solving the detected active set
//! exactly. When no strictly interior point exists (for example two tangent
//! discs) or Newton stalls, the exact active-set enumeration is used alone.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2, Vector3};

use crate::error::{Error, Infeasibility, Result};

const MAX_OUTER: usize = 50;
const MAX_NEWTON: usize = 100;
const BARRIER_GAP: f64 = 1e-10;
const INTERIOR_MARGIN: f64 = 1e-9;
/// Relative feasibility slack on candidate points, in units of the largest radius.
const FEAS_REL: f64 = 1e-10;

/// How the returned point was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QcqpMethod {
    Unconstrained,
    Barrier,
    BarrierPolished,
    ActiveSet,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QcqpSolution {
    pub u: Vector2<f64>,
    pub iterations: usize,
    pub method: QcqpMethod,
}

/// Solves the problem for constraints `(cᵢ, ρᵢ)`.
pub fn solve_qcqp2(l11: &Matrix2<f64>, targets: &[(Vector2<f64>, f64)]) -> Result<QcqpSolution> {
    if targets.is_empty() {
        return Err(Error::EmptyRegion);
    }
    if l11[(0, 1)] != 0.0 {
        return Err(Error::Dimension(
            "solve_qcqp2 expects a lower-triangular L11",
        ));
    }
    if !l11.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite("solve_qcqp2 L11"));
    }
    let dmax = l11[(0, 0)].abs().max(l11[(1, 1)].abs());
    let dmin = l11[(0, 0)].abs().min(l11[(1, 1)].abs());
    if dmin <= f64::EPSILON * dmax || dmax == 0.0 {
        return Err(Error::SingularTriangular {
            pivot: if l11[(0, 0)].abs() == dmin { 0 } else { 1 },
        });
    }
    for (c, rho) in targets {
        if !(c.iter().all(|v| v.is_finite()) && rho.is_finite()) {
            return Err(Error::NonFinite("solve_qcqp2 targets"));
        }
        if *rho <= 0.0 {
            return Err(Error::InvalidParameter(alloc::format!(
                "disc radius must be positive, got {rho}"
            )));
        }
    }
    if let Some(cert) = disjoint_pair(targets) {
        return Err(Error::InfeasibleRegion(cert));
    }

    // Work in units of the largest radius; the solution scales linearly.
    let scale = targets.iter().map(|t| t.1).fold(0.0_f64, f64::max);
    let scaled: alloc::vec::Vec<(Vector2<f64>, f64)> = targets
        .iter()
        .map(|(c, r)| (c / scale, r / scale))
        .collect();
    let problem = Problem {
        l: *l11,
        targets: &scaled,
    };

    if problem.feasible(&Vector2::zeros()) {
        return Ok(QcqpSolution {
            u: Vector2::zeros(),
            iterations: 0,
            method: QcqpMethod::Unconstrained,
        });
    }

    let mut iterations = 0;
    let barrier = problem
        .phase_one(&mut iterations)
        .and_then(|u0| problem.barrier(u0, &mut iterations));
    let all: alloc::vec::Vec<usize> = (0..scaled.len()).collect();
    let solution = match barrier {
        Some((u, t)) => {
            let active: alloc::vec::Vec<usize> = (0..scaled.len())
                .filter(|&i| -problem.constraint(&u, i) <= 1e3 / t + 1e-6)
                .collect();
            match problem.enumerate(&active) {
                Some(p) if p.norm_squared() <= u.norm_squared() * (1.0 + 1e-9) + 1e-15 => {
                    QcqpSolution {
                        u: p,
                        iterations,
                        method: QcqpMethod::BarrierPolished,
                    }
                }
                _ => QcqpSolution {
                    u,
                    iterations,
                    method: QcqpMethod::Barrier,
                },
            }
        }
        None => match problem.enumerate(&all) {
            Some(u) => QcqpSolution {
                u,
                iterations: iterations + 1,
                method: QcqpMethod::ActiveSet,
            },
            None => return Err(Error::InfeasibleRegion(Infeasibility::Solver)),
        },
    };
    Ok(QcqpSolution {
        u: solution.u * scale,
        ..solution
    })
}

/// Pair of discs whose centers are farther apart than the sum of radii.
pub fn disjoint_pair(targets: &[(Vector2<f64>, f64)]) -> Option<Infeasibility> {
    for i in 0..targets.len() {
        for j in i + 1..targets.len() {
            let gap = (targets[i].0 - targets[j].0).norm() - targets[i].1 - targets[j].1;
            if gap > 0.0 {
                return Some(Infeasibility::DisjointPair {
                    first: i,
                    second: j,
                    gap,
                });
            }
        }
    }
    None
}

struct Problem<'a> {
    l: Matrix2<f64>,
    targets: &'a [(Vector2<f64>, f64)],
}

impl Problem<'_> {
    fn constraint(&self, u: &Vector2<f64>, i: usize) -> f64 {
        let (c, r) = self.targets[i];
        (self.l * u - c).norm_squared() - r * r
    }

    fn feasible_p(&self, p: &Vector2<f64>) -> bool {
        self.targets
            .iter()
            .all(|(c, r)| (p - c).norm() <= r + FEAS_REL)
    }

    fn feasible(&self, u: &Vector2<f64>) -> bool {
        self.feasible_p(&(self.l * u))
    }

    fn to_u(&self, p: &Vector2<f64>) -> Vector2<f64> {
        let u0 = p[0] / self.l[(0, 0)];
        Vector2::new(u0, (p[1] - self.l[(1, 0)] * u0) / self.l[(1, 1)])
    }

    /// Strictly feasible starting point, or `None` if the intersection has no
    /// interior the barrier could use.
    fn phase_one(&self, iterations: &mut usize) -> Option<Vector2<f64>> {
        let m = self.targets.len() as f64;
        let mut p = self.targets.iter().map(|t| t.0).sum::<Vector2<f64>>() / m;
        let worst = |p: &Vector2<f64>| {
            self.targets
                .iter()
                .map(|(c, r)| (p - c).norm_squared() - r * r)
                .fold(f64::NEG_INFINITY, f64::max)
        };
        let mut x = Vector3::new(p[0], p[1], worst(&p) + 1.0);
        let mut t = 1.0;
        for _ in 0..MAX_OUTER {
            let value = |x: &Vector3<f64>| {
                let mut acc = t * x[2];
                for (c, r) in self.targets {
                    let g = (Vector2::new(x[0], x[1]) - c).norm_squared() - r * r - x[2];
                    if g >= 0.0 {
                        return None;
                    }
                    acc -= libm::log(-g);
                }
                Some(acc)
            };
            let grad_hess = |x: &Vector3<f64>| {
                let mut g = Vector3::new(0.0, 0.0, t);
                let mut h = SMatrix::<f64, 3, 3>::zeros();
                for (c, r) in self.targets {
                    let d = Vector2::new(x[0], x[1]) - c;
                    let gi = d.norm_squared() - r * r - x[2];
                    let dg = Vector3::new(2.0 * d[0], 2.0 * d[1], -1.0);
                    g += dg / (-gi);
                    h += dg * dg.transpose() / (gi * gi);
                    h[(0, 0)] += 2.0 / (-gi);
                    h[(1, 1)] += 2.0 / (-gi);
                }
                (g, h)
            };
            let stop = |x: &Vector3<f64>| worst(&Vector2::new(x[0], x[1])) < -INTERIOR_MARGIN;
            x = newton(x, value, grad_hess, stop, iterations)?;
            p = Vector2::new(x[0], x[1]);
            if stop(&x) {
                return Some(self.to_u(&p));
            }
            if m / t < BARRIER_GAP * 1e-2 {
                return None;
            }
            t *= 10.0;
        }
        None
    }

    /// Central path from a strictly feasible `u0`; returns the last iterate and
    /// the final barrier parameter.
    fn barrier(&self, u0: Vector2<f64>, iterations: &mut usize) -> Option<(Vector2<f64>, f64)> {
        let m = self.targets.len() as f64;
        let ltl = self.l.transpose() * self.l;
        let mut u = u0;
        let mut t = 1.0;
        for _ in 0..MAX_OUTER {
            let value = |u: &Vector2<f64>| {
                let mut acc = t * u.norm_squared();
                for i in 0..self.targets.len() {
                    let f = self.constraint(u, i);
                    if f >= 0.0 {
                        return None;
                    }
                    acc -= libm::log(-f);
                }
                Some(acc)
            };
            let grad_hess = |u: &Vector2<f64>| {
                let mut g = u * (2.0 * t);
                let mut h = Matrix2::identity() * (2.0 * t);
                for (c, r) in self.targets {
                    let res = self.l * u - c;
                    let f = res.norm_squared() - r * r;
                    let df = self.l.transpose() * res * 2.0;
                    g += df / (-f);
                    h += ltl * (2.0 / (-f)) + df * df.transpose() / (f * f);
                }
                (g, h)
            };
            u = newton(u, value, grad_hess, |_| false, iterations)?;
            if m / t < BARRIER_GAP {
                return Some((u, t));
            }
            t *= 10.0;
        }
        Some((u, t))
    }

    /// Exact optimum over candidate active sets drawn from `indices`: the
    /// origin, each single-constraint optimum, and each pairwise boundary
    /// intersection. Returns the feasible candidate of least norm.
    fn enumerate(&self, indices: &[usize]) -> Option<Vector2<f64>> {
        let mut best: Option<Vector2<f64>> = None;
        let mut consider = |u: Vector2<f64>| {
            if self.feasible(&u) && best.is_none_or(|b| u.norm_squared() < b.norm_squared()) {
                best = Some(u);
            }
        };
        consider(Vector2::zeros());
        for &i in indices {
            if let Some(u) = self.single(i) {
                consider(u);
            }
        }
        for (a, &i) in indices.iter().enumerate() {
            for &j in &indices[a + 1..] {
                for p in circle_intersections(self.targets[i], self.targets[j])
                    .into_iter()
                    .flatten()
                {
                    consider(self.to_u(&p));
                }
            }
        }
        best
    }

    /// Minimum-norm `u` on the single disc `i`, from the stationarity condition
    /// `(I + λ LᵀL) u = λ Lᵀ c` with `λ` bisected so the constraint is tight.
    fn single(&self, i: usize) -> Option<Vector2<f64>> {
        let (c, r) = self.targets[i];
        if c.norm() <= r {
            return Some(Vector2::zeros());
        }
        let ltl = self.l.transpose() * self.l;
        let ltc = self.l.transpose() * c;
        let at = |lambda: f64| -> Option<Vector2<f64>> {
            (Matrix2::identity() + ltl * lambda)
                .cholesky()
                .map(|ch| ch.solve(&(ltc * lambda)))
        };
        let dist = |u: &Vector2<f64>| (self.l * u - c).norm();
        let mut lo = 0.0;
        let mut hi = 1.0;
        loop {
            let u = at(hi)?;
            if dist(&u) <= r {
                break;
            }
            lo = hi;
            hi *= 2.0;
            if !hi.is_finite() {
                return None;
            }
        }
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if dist(&at(mid)?) <= r {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        at(hi)
    }
}

/// Boundary intersection points of two circles (`p`-space). Tangent circles
/// give the single touching point twice.
fn circle_intersections(
    a: (Vector2<f64>, f64),
    b: (Vector2<f64>, f64),
) -> [Option<Vector2<f64>>; 2] {
    let (c0, r0) = a;
    let (c1, r1) = b;
    let delta = c1 - c0;
    let d = delta.norm();
    let scale = r0.max(r1);
    if d <= f64::EPSILON * scale {
        return [None, None];
    }
    let along = (d * d + r0 * r0 - r1 * r1) / (2.0 * d);
    let mut h2 = r0 * r0 - along * along;
    if h2 < 0.0 {
        let slack = FEAS_REL * scale;
        if h2 < -slack * slack * 1e4 {
            return [None, None];
        }
        h2 = 0.0;
    }
    let h = libm::sqrt(h2);
    let e = delta / d;
    let n = Vector2::new(-e[1], e[0]);
    let base = c0 + e * along;
    [Some(base + n * h), Some(base - n * h)]
}

/// Damped Newton on a self-concordant barrier. `value` returns `None` outside
/// the domain. Exits early once `stop` holds; `None` means the line search
/// stalled far from stationarity.
fn newton<const D: usize>(
    mut x: SVector<f64, D>,
    value: impl Fn(&SVector<f64, D>) -> Option<f64>,
    grad_hess: impl Fn(&SVector<f64, D>) -> (SVector<f64, D>, SMatrix<f64, D, D>),
    stop: impl Fn(&SVector<f64, D>) -> bool,
    iterations: &mut usize,
) -> Option<SVector<f64, D>> {
    let mut fx = value(&x)?;
    for _ in 0..MAX_NEWTON {
        if stop(&x) {
            return Some(x);
        }
        let (g, h) = grad_hess(&x);
        let dx = -h.cholesky()?.solve(&g);
        let decrement = -g.dot(&dx);
        if !decrement.is_finite() {
            return None;
        }
        if decrement <= 1e-14 {
            return Some(x);
        }
        *iterations += 1;
        let mut s = 1.0;
        loop {
            let trial = x + dx * s;
            if let Some(ft) = value(&trial) {
                if ft <= fx - 0.25 * s * decrement {
                    x = trial;
                    fx = ft;
                    break;
                }
            }
            s *= 0.5;
            if s < 1e-20 {
                // Rounding floor of the merit function: accept if nearly stationary.
                return if decrement <= 1e-8 { Some(x) } else { None };
            }
        }
    }
    Some(x)
}
