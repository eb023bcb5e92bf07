//! Matrix kernels used by the solvers: thin SVD, singular value
//! thresholding, least-squares factor updates and threshold rank estimation.

use nalgebra::{DMatrix, Dyn, Matrix, Storage, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Singular values below this fraction of the largest are treated as zero
/// when forming pseudoinverses.
pub const PINV_RTOL: f64 = 1e-12;

/// Aspect ratio from which SVD-like kernels reduce the long side first.
const ASPECT_SWITCH: usize = 4;

const SVD_MAX_ITER: usize = 10_000;

/// Thin SVD `m = U diag(s) V^T` with `s` nonincreasing.
#[derive(Debug, Clone)]
pub struct Svd {
    pub u: DMatrix<f64>,
    pub singular_values: Vec<f64>,
    pub v: DMatrix<f64>,
}

impl Svd {
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let mut us = self.u.clone();
        for (mut col, &s) in us.column_iter_mut().zip(&self.singular_values) {
            col *= s;
        }
        us * self.v.transpose()
    }
}

fn check_finite<S: Storage<f64, Dyn, Dyn>>(m: &Matrix<f64, Dyn, Dyn, S>) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::arg("matrix contains non-finite entries"))
    }
}

/// Thin SVD. Strongly rectangular inputs are first reduced by a QR
/// factorization of the long side, keeping full accuracy of the factors.
pub fn svd<S: Storage<f64, Dyn, Dyn>>(m: &Matrix<f64, Dyn, Dyn, S>) -> Result<Svd> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::arg("svd of an empty matrix"));
    }
    if cols >= ASPECT_SWITCH * rows {
        let t = svd(&m.transpose())?;
        return Ok(Svd {
            u: t.v,
            singular_values: t.singular_values,
            v: t.u,
        });
    }
    if rows >= ASPECT_SWITCH * cols {
        let qr = m.clone_owned().qr();
        let (q, r) = qr.unpack();
        let inner = svd_square(r)?;
        return Ok(Svd {
            u: q * inner.u,
            singular_values: inner.singular_values,
            v: inner.v,
        });
    }
    svd_square(m.clone_owned())
}

fn svd_square(m: DMatrix<f64>) -> Result<Svd> {
    let r = m.nrows().min(m.ncols());
    let dec = SVD::try_new(m, true, true, f64::EPSILON, SVD_MAX_ITER).ok_or_else(|| {
        Error::numerical(SVD_MAX_ITER, "SVD did not converge")
    })?;
    let (u, v_t) = match (dec.u, dec.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::numerical(0, "SVD factors missing")),
    };
    let mut order: Vec<usize> = (0..r).collect();
    order.sort_by(|&a, &b| dec.singular_values[b].total_cmp(&dec.singular_values[a]));
    let singular_values = order.iter().map(|&i| dec.singular_values[i].max(0.0)).collect();
    let u = DMatrix::from_fn(u.nrows(), r, |i, j| u[(i, order[j])]);
    let v = DMatrix::from_fn(v_t.ncols(), r, |i, j| v_t[(order[j], i)]);
    Ok(Svd {
        u,
        singular_values,
        v,
    })
}

/// Output of [`shrink_detailed`].
#[derive(Debug, Clone)]
pub struct Shrunk {
    pub matrix: DMatrix<f64>,
    /// Nuclear norm of `matrix`, i.e. the sum of thresholded singular values.
    pub nuclear_norm: f64,
    /// Number of singular values that survived the threshold.
    pub rank: usize,
}

/// Singular value soft-thresholding `D_gamma(m) = U diag(max(s - gamma, 0)) V^T`,
/// the proximal operator of `gamma * ||.||_*`.
pub fn shrink<S: Storage<f64, Dyn, Dyn>>(m: &Matrix<f64, Dyn, Dyn, S>, gamma: f64) -> Result<DMatrix<f64>> {
    shrink_detailed(m, gamma).map(|s| s.matrix)
}

pub fn shrink_detailed<S: Storage<f64, Dyn, Dyn>>(
    m: &Matrix<f64, Dyn, Dyn, S>,
    gamma: f64,
) -> Result<Shrunk> {
    if !(gamma >= 0.0) || !gamma.is_finite() {
        return Err(Error::arg(format!("shrinkage threshold must be >= 0, got {gamma}")));
    }
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::arg("shrink of an empty matrix"));
    }

    // Wide or tall inputs go through the Gram matrix of the short side:
    // with G = M M^T = Q diag(s^2) Q^T, D_gamma(M) = Q diag((s - gamma)/s) Q^T M.
    if gamma > 0.0 && (cols >= ASPECT_SWITCH * rows || rows >= ASPECT_SWITCH * cols) {
        let wide = cols >= rows;
        let gram = if wide { m * m.transpose() } else { m.tr_mul(m) };
        let eig = SymmetricEigen::try_new(gram, f64::EPSILON, SVD_MAX_ITER)
            .ok_or_else(|| Error::numerical(SVD_MAX_ITER, "eigendecomposition did not converge"))?;
        let mut kept = Vec::new();
        let mut nuclear_norm = 0.0;
        for (i, &w) in eig.eigenvalues.iter().enumerate() {
            let s = w.max(0.0).sqrt();
            if s > gamma {
                kept.push((i, (s - gamma) / s));
                nuclear_norm += s - gamma;
            }
        }
        let rank = kept.len();
        if rank == 0 {
            return Ok(Shrunk {
                matrix: DMatrix::zeros(rows, cols),
                nuclear_norm: 0.0,
                rank,
            });
        }
        let q = DMatrix::from_fn(eig.eigenvectors.nrows(), rank, |r, c| {
            eig.eigenvectors[(r, kept[c].0)]
        });
        let mut qs = q.clone();
        for (mut col, &(_, f)) in qs.column_iter_mut().zip(&kept) {
            col *= f;
        }
        let matrix = if wide {
            qs * q.tr_mul(m)
        } else {
            (m * q) * qs.transpose()
        };
        return Ok(Shrunk {
            matrix,
            nuclear_norm,
            rank,
        });
    }

    let dec = svd(m)?;
    let kept: Vec<(usize, f64)> = dec
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s > gamma)
        .map(|(i, &s)| (i, s - gamma))
        .collect();
    let rank = kept.len();
    let nuclear_norm = kept.iter().map(|&(_, s)| s).sum();
    let mut us = DMatrix::zeros(rows, rank);
    let mut v = DMatrix::zeros(cols, rank);
    for (c, &(i, s)) in kept.iter().enumerate() {
        us.set_column(c, &(dec.u.column(i) * s));
        v.set_column(c, &dec.v.column(i));
    }
    Ok(Shrunk {
        matrix: us * v.transpose(),
        nuclear_norm,
        rank,
    })
}

/// Simplified factor update `U = X V^T` (no pseudoinverse of `V V^T`).
pub fn ls_update_u<S1, S2>(
    x: &Matrix<f64, Dyn, Dyn, S1>,
    v: &Matrix<f64, Dyn, Dyn, S2>,
) -> Result<DMatrix<f64>>
where
    S1: Storage<f64, Dyn, Dyn>,
    S2: Storage<f64, Dyn, Dyn>,
{
    if x.ncols() != v.ncols() {
        return Err(Error::arg(format!(
            "U update needs matching column counts, got {}x{} and {}x{}",
            x.nrows(),
            x.ncols(),
            v.nrows(),
            v.ncols()
        )));
    }
    Ok(x * v.transpose())
}

/// Least-squares factor `V = (U^T U)^+ U^T X`, the minimizer of `||U V - X||_F`.
pub fn ls_update_v<S1, S2>(
    u: &Matrix<f64, Dyn, Dyn, S1>,
    x: &Matrix<f64, Dyn, Dyn, S2>,
) -> Result<DMatrix<f64>>
where
    S1: Storage<f64, Dyn, Dyn>,
    S2: Storage<f64, Dyn, Dyn>,
{
    if u.nrows() != x.nrows() {
        return Err(Error::arg(format!(
            "V update needs matching row counts, got {}x{} and {}x{}",
            u.nrows(),
            u.ncols(),
            x.nrows(),
            x.ncols()
        )));
    }
    let gram_pinv = pinv_symmetric(u.tr_mul(u))?;
    Ok(gram_pinv * u.tr_mul(x))
}

/// Moore-Penrose pseudoinverse of a symmetric positive semidefinite matrix.
pub fn pinv_symmetric(g: DMatrix<f64>) -> Result<DMatrix<f64>> {
    check_finite(&g)?;
    let n = g.nrows();
    let eig = SymmetricEigen::try_new(g, f64::EPSILON, SVD_MAX_ITER)
        .ok_or_else(|| Error::numerical(SVD_MAX_ITER, "eigendecomposition did not converge"))?;
    let top = eig.eigenvalues.iter().fold(0.0f64, |a, &w| a.max(w.abs()));
    let mut scaled = eig.eigenvectors.clone();
    for (mut col, &w) in scaled.column_iter_mut().zip(eig.eigenvalues.iter()) {
        if top > 0.0 && w.abs() > PINV_RTOL * top {
            col /= w;
        } else {
            col.fill(0.0);
        }
    }
    let out = scaled * eig.eigenvectors.transpose();
    debug_assert_eq!(out.shape(), (n, n));
    Ok(out)
}

/// Number of singular values with `s_l / s_1 > th` (at least 1).
pub fn estimate_rank(singular_values: &[f64], th: f64) -> Result<usize> {
    if !(th > 0.0 && th < 1.0) {
        return Err(Error::arg(format!("rank threshold must lie in (0, 1), got {th}")));
    }
    let first = *singular_values
        .first()
        .ok_or_else(|| Error::arg("empty spectrum"))?;
    if !(first > 0.0) {
        return Err(Error::arg("spectrum is identically zero"));
    }
    if singular_values.windows(2).any(|w| w[1] > w[0]) {
        return Err(Error::arg("singular values must be nonincreasing"));
    }
    Ok(singular_values
        .iter()
        .filter(|&&s| s / first > th)
        .count()
        .max(1))
}

/// Singular values only, nonincreasing. Uses the Gram matrix of the short
/// side for strongly rectangular inputs.
pub fn singular_values<S: Storage<f64, Dyn, Dyn>>(m: &Matrix<f64, Dyn, Dyn, S>) -> Result<Vec<f64>> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    if rows == 0 || cols == 0 {
        return Err(Error::arg("singular values of an empty matrix"));
    }
    let mut s: Vec<f64> = if cols >= ASPECT_SWITCH * rows || rows >= ASPECT_SWITCH * cols {
        let gram = if cols >= rows { m * m.transpose() } else { m.tr_mul(m) };
        let eig = SymmetricEigen::try_new(gram, f64::EPSILON, SVD_MAX_ITER)
            .ok_or_else(|| Error::numerical(SVD_MAX_ITER, "eigendecomposition did not converge"))?;
        eig.eigenvalues.iter().map(|w| w.max(0.0).sqrt()).collect()
    } else {
        m.clone_owned()
            .try_svd(false, false, f64::EPSILON, SVD_MAX_ITER)
            .ok_or_else(|| Error::numerical(SVD_MAX_ITER, "SVD did not converge"))?
            .singular_values
            .iter()
            .copied()
            .collect()
    };
    s.sort_by(|a, b| b.total_cmp(a));
    Ok(s)
}

/// Count of singular values above `rtol * s_1`.
pub fn numerical_rank(s: &[f64], rtol: f64) -> usize {
    match s.first() {
        Some(&top) if top > 0.0 => s.iter().filter(|&&x| x > rtol * top).count(),
        _ => 0,
    }
}
