//! Dense small-matrix kernels for the square-root filter.
//!
//! Covariances are carried as upper-triangular factors `U` with `Σ = UᵀU`.
//! Every kernel works on run-time dimensions; the state is 4-dimensional but
//! the measurement block changes size from epoch to epoch.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative band below zero that is still read as roundoff in a downdate pivot.
pub const DOWNDATE_TOLERANCE: f64 = 1e-12;

/// Upper-triangular Cholesky factor `U` of a covariance `Σ = UᵀU`.
///
/// Entries strictly below the diagonal are exactly zero and the diagonal is
/// non-negative.
#[derive(Debug, Clone, PartialEq)]
pub struct UpperCholesky(DMatrix<f64>);

impl UpperCholesky {
    /// Wraps a square matrix after checking the triangular/sign invariants.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if !matrix.is_square() || matrix.nrows() == 0 {
            return Err(Error::Dimension("UpperCholesky::new"));
        }
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("UpperCholesky::new"));
        }
        let n = matrix.nrows();
        for i in 0..n {
            if matrix[(i, i)] < 0.0 {
                return Err(Error::InvalidParameter(alloc::format!(
                    "negative diagonal entry {} at {i}",
                    matrix[(i, i)]
                )));
            }
            for j in 0..i {
                if matrix[(i, j)] != 0.0 {
                    return Err(Error::InvalidParameter(alloc::format!(
                        "non-zero entry below the diagonal at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self(matrix))
    }

    pub fn identity(dim: usize) -> Self {
        Self(DMatrix::identity(dim, dim))
    }

    /// Diagonal factor; every entry must be finite and non-negative.
    pub fn from_diagonal(diag: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Factor of a symmetric positive definite matrix by dense Cholesky.
    ///
    /// Returns `None` when the matrix is not numerically positive definite.
    pub fn from_covariance(sigma: &DMatrix<f64>) -> Option<Self> {
        if !sigma.is_square() || sigma.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let sym = (sigma + sigma.transpose()) * 0.5;
        let chol = nalgebra::Cholesky::new(sym)?;
        let mut upper = chol.l().transpose();
        // nalgebra leaves explicit zeros below the diagonal but be exact anyway
        for i in 0..upper.nrows() {
            for j in 0..i {
                upper[(i, j)] = 0.0;
            }
        }
        Some(Self(upper))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<f64> {
        self.0
    }

    /// The lower-triangular factor `Uᵀ`, whose columns generate sigma points.
    pub fn lower(&self) -> DMatrix<f64> {
        self.0.transpose()
    }

    /// `UᵀU`.
    pub fn covariance(&self) -> DMatrix<f64> {
        self.0.tr_mul(&self.0)
    }

    pub fn diagonal(&self) -> DVector<f64> {
        self.0.diagonal()
    }

    /// True when every diagonal entry is strictly positive.
    pub fn is_positive_definite(&self) -> bool {
        self.0.diagonal().iter().all(|&d| d > 0.0)
    }
}

/// Upper-triangular factor `R` of the QR factorization of `stack` (m ≥ n).
///
/// `RᵀR = stackᵀ·stack`. Rows of `R` are sign-normalized so the diagonal is
/// non-negative, which makes the factor unique for full-rank input. A
/// rank-deficient stack yields a zero on the diagonal.
pub fn qr_factor(stack: &DMatrix<f64>) -> Result<UpperCholesky> {
    let (m, n) = stack.shape();
    if n == 0 || m < n {
        return Err(Error::Dimension("qr_factor"));
    }
    if stack.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("qr_factor"));
    }

    let mut a = stack.clone();
    let mut v: Vec<f64> = Vec::with_capacity(m);
    for k in 0..n {
        let scale = (k..m).fold(0.0_f64, |acc, i| acc.max(a[(i, k)].abs()));
        if scale == 0.0 {
            continue;
        }
        let norm = scale
            * libm::sqrt(
                (k..m)
                    .map(|i| {
                        let v = a[(i, k)] / scale;
                        v * v
                    })
                    .sum::<f64>(),
            );
        let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };

        v.clear();
        v.extend((k..m).map(|i| a[(i, k)]));
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            continue;
        }
        for j in k..n {
            let dot: f64 = (k..m).map(|i| v[i - k] * a[(i, j)]).sum();
            let s = 2.0 * dot / vnorm2;
            for i in k..m {
                a[(i, j)] -= s * v[i - k];
            }
        }
        a[(k, k)] = alpha;
        for i in (k + 1)..m {
            a[(i, k)] = 0.0;
        }
    }

    let mut r = DMatrix::zeros(n, n);
    for i in 0..n {
        let flip = a[(i, i)] < 0.0;
        for j in i..n {
            r[(i, j)] = if flip { -a[(i, j)] } else { a[(i, j)] };
        }
    }
    Ok(UpperCholesky(r))
}

/// Successive rank-1 downdates: returns `V` with `VᵀV = UᵀU − cols·colsᵀ`.
///
/// `cols` is `n × p`; each column is removed in turn. The result must stay
/// positive definite: a pivot below `-DOWNDATE_TOLERANCE·d²` is indefinite,
/// and a pivot clamped to zero leaves a singular factor, which is reported
/// the same way.
pub fn chol_downdate(u: &UpperCholesky, cols: &DMatrix<f64>) -> Result<UpperCholesky> {
    let n = u.dim();
    if cols.nrows() != n {
        return Err(Error::Dimension("chol_downdate"));
    }
    if cols.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("chol_downdate"));
    }
    let mut r = u.0.clone();
    let mut x: Vec<f64> = Vec::with_capacity(n);
    for col in cols.column_iter() {
        x.clear();
        x.extend(col.iter().copied());
        for k in 0..n {
            let rkk = r[(k, k)];
            let xk = x[k];
            let mut d = rkk * rkk - xk * xk;
            if d < -DOWNDATE_TOLERANCE * rkk * rkk {
                return Err(Error::IndefiniteDowndate { pivot: k });
            }
            if d < 0.0 {
                d = 0.0;
            }
            if d == 0.0 {
                return Err(Error::IndefiniteDowndate { pivot: k });
            }
            let rnew = libm::sqrt(d);
            let c = rnew / rkk;
            let s = xk / rkk;
            r[(k, k)] = rnew;
            for j in (k + 1)..n {
                let rkj = (r[(k, j)] - s * x[j]) / c;
                x[j] = c * x[j] - s * rkj;
                r[(k, j)] = rkj;
            }
        }
    }
    Ok(UpperCholesky(r))
}

fn singular_pivot<I: Iterator<Item = f64> + Clone>(diag: I) -> Option<usize> {
    let largest = diag.clone().fold(0.0_f64, |acc, d| acc.max(d.abs()));
    diag.enumerate()
        .find(|(_, d)| !(d.abs() > f64::EPSILON * largest) || largest == 0.0)
        .map(|(i, _)| i)
}

/// Forward substitution: `y` with `L·y = b` for lower-triangular `L`.
///
/// Only the lower triangle of `l` is read. `b` may carry several columns.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = l.nrows();
    if !l.is_square() || b.nrows() != n {
        return Err(Error::Dimension("solve_lower"));
    }
    if let Some(pivot) = singular_pivot((0..n).map(|i| l[(i, i)])) {
        return Err(Error::SingularTriangular { pivot });
    }
    let mut y = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut acc = y[(i, c)];
            for j in 0..i {
                acc -= l[(i, j)] * y[(j, c)];
            }
            y[(i, c)] = acc / l[(i, i)];
        }
    }
    Ok(y)
}

/// Vector form of [`solve_lower`].
pub fn solve_lower_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> Result<DVector<f64>> {
    let y = solve_lower(l, &DMatrix::from_column_slice(b.len(), 1, b.as_slice()))?;
    Ok(DVector::from_column_slice(y.as_slice()))
}

/// `T` with `T·Uz = B`, solved row by row against the upper factor.
pub fn solve_upper_multi(uz: &UpperCholesky, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = uz.dim();
    if b.ncols() != n {
        return Err(Error::Dimension("solve_upper_multi"));
    }
    let u = &uz.0;
    if let Some(pivot) = singular_pivot((0..n).map(|i| u[(i, i)])) {
        return Err(Error::SingularTriangular { pivot });
    }
    let mut t = b.clone();
    for row in 0..b.nrows() {
        for j in 0..n {
            let mut acc = t[(row, j)];
            for i in 0..j {
                acc -= t[(row, i)] * u[(i, j)];
            }
            t[(row, j)] = acc / u[(j, j)];
        }
    }
    Ok(t)
}
