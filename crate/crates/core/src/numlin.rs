//! Dense numerical kernels: thin SVD, singular value thresholding,
//! element-wise shrinkage and PCA.
//!
//! Everything here is double precision and a pure function of its inputs.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Dense column-major real matrix.
pub type Matrix = DMatrix<f64>;
/// Dense real column vector.
pub type Vector = DVector<f64>;

/// Thin singular value decomposition `q = left * diag(singular_values) * right^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    /// `rows x r` with orthonormal columns, `r = min(rows, cols)`.
    pub left: Matrix,
    /// Nonincreasing, nonnegative.
    pub singular_values: Vector,
    /// `cols x r` with orthonormal columns.
    pub right: Matrix,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> Matrix {
        let mut scaled = self.left.clone();
        for (mut col, s) in scaled.column_iter_mut().zip(self.singular_values.iter()) {
            col *= *s;
        }
        scaled * self.right.transpose()
    }

    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.sum()
    }
}

pub(crate) fn ensure_finite(m: &Matrix, what: &'static str) -> Result<()> {
    match m.iter().position(|v| !v.is_finite()) {
        None => Ok(()),
        Some(i) => Err(Error::NonFinite { what, index: i }),
    }
}

/// Thin SVD with singular values sorted nonincreasing and a fixed sign
/// convention: the largest-magnitude entry of every left singular vector is
/// nonnegative (first such entry on ties). The matching right vector is
/// flipped along with it.
pub fn thin_svd(q: &Matrix) -> Result<SvdFactors> {
    if q.nrows() == 0 || q.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    ensure_finite(q, "svd input")?;
    let svd = q.clone().svd(true, true);
    let u = svd.u.expect("left factors requested");
    let v_t = svd.v_t.expect("right factors requested");
    let sigma = svd.singular_values;
    let r = sigma.len();

    let mut order: Vec<usize> = (0..r).collect();
    // Stable sort keeps the factorization order among exact ties.
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));

    let mut left = Matrix::zeros(q.nrows(), r);
    let mut right = Matrix::zeros(q.ncols(), r);
    let mut singular_values = Vector::zeros(r);
    for (dst, &src) in order.iter().enumerate() {
        let mut lcol = u.column(src).into_owned();
        let mut rcol = v_t.row(src).transpose();
        if leading_entry_negative(lcol.as_slice()) {
            lcol.neg_mut();
            rcol.neg_mut();
        }
        left.set_column(dst, &lcol);
        right.set_column(dst, &rcol);
        singular_values[dst] = sigma[src].max(0.0);
    }
    Ok(SvdFactors {
        left,
        singular_values,
        right,
    })
}

fn leading_entry_negative(v: &[f64]) -> bool {
    let mut best = 0usize;
    for (i, x) in v.iter().enumerate() {
        if x.abs() > v[best].abs() {
            best = i;
        }
    }
    v.get(best).is_some_and(|x| *x < 0.0)
}

/// Soft threshold of a scalar: `sgn(q) * max(|q| - tau, 0)`.
///
/// `tau` is assumed nonnegative; the checked entry points are
/// [`shrink`] and [`shrink_in_place`].
#[inline]
pub fn soft_threshold(q: f64, tau: f64) -> f64 {
    if q > tau {
        q - tau
    } else if q < -tau {
        q + tau
    } else {
        0.0
    }
}

fn check_tau(tau: f64) -> Result<()> {
    if tau >= 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::NegativeThreshold(tau))
    }
}

/// Element-wise shrinkage operator.
pub fn shrink(q: &Vector, tau: f64) -> Result<Vector> {
    check_tau(tau)?;
    Ok(q.map(|v| soft_threshold(v, tau)))
}

pub fn shrink_in_place(q: &mut [f64], tau: f64) -> Result<()> {
    check_tau(tau)?;
    for v in q.iter_mut() {
        *v = soft_threshold(*v, tau);
    }
    Ok(())
}

/// Result of [`svt_with_spectrum`]: the thresholded matrix and its singular values.
#[derive(Debug, Clone)]
pub struct Thresholded {
    pub matrix: Matrix,
    pub singular_values: Vector,
}

impl Thresholded {
    pub fn nuclear_norm(&self) -> f64 {
        self.singular_values.sum()
    }
}

/// Singular value thresholding `U * S_tau[Sigma] * V^T`, the proximal operator
/// of `tau * ||.||_*`.
pub fn svt(q: &Matrix, tau: f64) -> Result<Matrix> {
    svt_with_spectrum(q, tau).map(|t| t.matrix)
}

/// Same as [`svt`], also returning the thresholded singular values.
pub fn svt_with_spectrum(q: &Matrix, tau: f64) -> Result<Thresholded> {
    check_tau(tau)?;
    let f = thin_svd(q)?;
    let kept = f.singular_values.iter().take_while(|s| **s > tau).count();
    let mut matrix = Matrix::zeros(q.nrows(), q.ncols());
    let mut singular_values = Vector::zeros(f.singular_values.len());
    for i in 0..kept {
        let s = f.singular_values[i] - tau;
        singular_values[i] = s;
        let u = f.left.column(i);
        let v = f.right.column(i);
        matrix.ger(s, &u, &v, 1.0);
    }
    Ok(Thresholded {
        matrix,
        singular_values,
    })
}

/// Nuclear norm (sum of singular values).
pub fn nuclear_norm(q: &Matrix) -> Result<f64> {
    if q.nrows() == 0 || q.ncols() == 0 {
        return Err(Error::EmptyMatrix);
    }
    ensure_finite(q, "svd input")?;
    Ok(q.clone().singular_values().iter().map(|s| s.max(0.0)).sum())
}

/// Principal components of a sample matrix (one sample per column).
#[derive(Debug, Clone)]
pub struct Pca {
    pub mean: Vector,
    /// `f x k` with orthonormal columns ordered by nonincreasing variance.
    pub basis: Matrix,
    /// Per-component sample variance (divided by `N - 1`).
    pub variances: Vector,
    /// Set when fewer than the requested components were available.
    pub truncated: bool,
}

/// PCA by thin SVD of the centred sample matrix. Components beyond the
/// numerical rank are dropped and `truncated` is set.
pub fn pca(samples: &Matrix, k: usize) -> Result<Pca> {
    let (f, n) = samples.shape();
    if n < 2 {
        return Err(Error::TooFewSamples { needed: 2, got: n });
    }
    ensure_finite(samples, "pca samples")?;
    let mean = samples.column_mean();
    let mut centred = samples.clone();
    for mut col in centred.column_iter_mut() {
        col -= &mean;
    }

    let svd = thin_svd(&centred)?;
    let smax = svd.singular_values.get(0).copied().unwrap_or(0.0);
    let tol = (f.max(n) as f64) * f64::EPSILON * smax.max(f64::MIN_POSITIVE);
    let rank = if smax == 0.0 {
        0
    } else {
        svd.singular_values.iter().filter(|s| **s > tol).count()
    };
    let kept = k.min(rank);

    let basis = svd.left.columns(0, kept).into_owned();
    let variances = svd
        .singular_values
        .rows(0, kept)
        .map(|s| s * s / (n as f64 - 1.0));
    Ok(Pca {
        mean,
        basis,
        variances,
        truncated: kept < k,
    })
}

/// Modified Gram-Schmidt with re-orthogonalization. Columns whose residual
/// norm falls below `tol` times their original norm are dropped.
pub fn orthonormalize(columns: &Matrix, tol: f64) -> Matrix {
    let mut kept: Vec<Vector> = Vec::with_capacity(columns.ncols());
    for col in columns.column_iter() {
        let original = col.norm();
        if original == 0.0 {
            continue;
        }
        let mut v = col.into_owned();
        for _ in 0..2 {
            for q in &kept {
                let d = q.dot(&v);
                v.axpy(-d, q, 1.0);
            }
        }
        let r = v.norm();
        if r > tol * original {
            kept.push(v / r);
        }
    }
    if kept.is_empty() {
        return Matrix::zeros(columns.nrows(), 0);
    }
    Matrix::from_columns(&kept)
}

/// Solution of a symmetric positive definite system together with the
/// eigenvalue condition estimate of the matrix.
#[derive(Debug, Clone)]
pub struct SpdSolve {
    pub solution: Vector,
    pub condition: f64,
}

/// Solve `a x = b` for symmetric positive definite `a` through its
/// eigendecomposition. Fails when the condition number exceeds `max_condition`.
pub fn solve_spd(a: &Matrix, b: &Vector, max_condition: f64) -> Result<SpdSolve> {
    let n = a.nrows();
    if n == 0 {
        return Ok(SpdSolve {
            solution: Vector::zeros(0),
            condition: 1.0,
        });
    }
    ensure_finite(a, "spd system")?;
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let max = eig.eigenvalues.max();
    let min = eig.eigenvalues.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if condition.is_nan() || condition >= max_condition {
        return Err(Error::IllConditioned { condition });
    }
    let rhs = eig.eigenvectors.transpose() * b;
    let scaled = rhs.component_div(&eig.eigenvalues);
    Ok(SpdSolve {
        solution: &eig.eigenvectors * scaled,
        condition,
    })
}
