//! Chi-square quantiles for the sigma-point spread `η_α`.

use crate::error::{Error, Result};

const MAX_ITER: usize = 500;

/// Regularized lower incomplete gamma function `P(a, x)`.
pub fn regularized_gamma_p(a: f64, x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    if x < a + 1.0 {
        gamma_series(a, x)
    } else {
        1.0 - gamma_continued_fraction(a, x)
    }
}

fn gamma_series(a: f64, x: f64) -> f64 {
    let mut ap = a;
    let mut term = 1.0 / a;
    let mut sum = term;
    for _ in 0..MAX_ITER {
        ap += 1.0;
        term *= x / ap;
        sum += term;
        if term.abs() < sum.abs() * f64::EPSILON {
            break;
        }
    }
    sum * libm::exp(-x + a * libm::log(x) - libm::lgamma(a))
}

// Lentz evaluation of the continued fraction for Q(a, x).
fn gamma_continued_fraction(a: f64, x: f64) -> f64 {
    let tiny = 1e-300;
    let mut b = x + 1.0 - a;
    let mut c = 1.0 / tiny;
    let mut d = 1.0 / b;
    let mut h = d;
    for i in 1..MAX_ITER {
        let an = -(i as f64) * (i as f64 - a);
        b += 2.0;
        d = an * d + b;
        if d.abs() < tiny {
            d = tiny;
        }
        c = b + an / c;
        if c.abs() < tiny {
            c = tiny;
        }
        d = 1.0 / d;
        let delta = d * c;
        h *= delta;
        if (delta - 1.0).abs() < f64::EPSILON {
            break;
        }
    }
    libm::exp(-x + a * libm::log(x) - libm::lgamma(a)) * h
}

/// CDF of the Chi-square distribution with `dof` degrees of freedom.
pub fn chi2_cdf(x: f64, dof: usize) -> f64 {
    regularized_gamma_p(dof as f64 / 2.0, x / 2.0)
}

/// `η_α`: the Chi-square(`dof`) quantile at confidence `alpha`.
///
/// Found by bracketing and bisection on the CDF; the bracket is shrunk well
/// past the 1e-8 absolute tolerance the filter needs.
pub fn eta_from_alpha(alpha: f64, dof: usize) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidParameter(alloc::format!(
            "confidence alpha must lie in (0, 1), got {alpha}"
        )));
    }
    if dof == 0 {
        return Err(Error::InvalidParameter(
            "state dimension must be positive".into(),
        ));
    }
    let mut lo = 0.0_f64;
    let mut hi = dof as f64;
    while chi2_cdf(hi, dof) < alpha {
        lo = hi;
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if chi2_cdf(mid, dof) < alpha {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= 1e-14 * hi.max(f64::MIN_POSITIVE) {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    #[test]
    fn reported_confidence_seventy_percent() {
        let eta = eta_from_alpha(0.70, 4).unwrap();
        assert!((eta - 4.8784).abs() < 1e-3, "{eta}");
    }

    #[test]
    fn two_dof_closed_form() {
        // Chi-square(2) quantile is -2 ln(1 - alpha)
        let eta = eta_from_alpha(0.5, 2).unwrap();
        assert!((eta - 2.0 * core::f64::consts::LN_2).abs() < 1e-10);
        for &a in &[0.01, 0.3, 0.9, 0.999] {
            let eta = eta_from_alpha(a, 2).unwrap();
            assert!((eta + 2.0 * libm::log(1.0 - a)).abs() < 1e-8);
        }
    }

    #[test]
    fn small_alpha_goes_to_zero() {
        let eta = eta_from_alpha(1e-9, 4).unwrap();
        assert!(eta > 0.0 && eta < 1e-3);
    }

    #[test]
    fn rejects_out_of_range() {
        for a in [0.0, 1.0, -0.2, 1.5, f64::NAN] {
            assert!(eta_from_alpha(a, 4).is_err());
        }
    }

    #[test]
    fn agrees_with_statrs() {
        for dof in 1..=8 {
            let reference = ChiSquared::new(dof as f64).unwrap();
            for &a in &[0.05, 0.5, 0.6, 0.7, 0.85, 0.99] {
                let eta = eta_from_alpha(a, dof).unwrap();
                assert!((reference.cdf(eta) - a).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn alpha_above_point_six_gives_eta_above_four() {
        assert!(eta_from_alpha(0.6, 4).unwrap() < 4.0 + 0.05);
        assert!(eta_from_alpha(0.601, 4).unwrap() > 4.0);
    }
}
