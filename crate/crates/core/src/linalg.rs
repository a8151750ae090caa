//! Small dense helpers shared by the solvers.

use nalgebra::{DMatrix, DVector};

use crate::error::{OparcError, Result};
use crate::{CMatrix, CVector, C64};

/// Frobenius-norm of `a - b` relative to the norm of `b`.
pub fn rel_diff(a: &CMatrix, b: &CMatrix) -> f64 {
    let denom = b.norm();
    let num = (a - b).norm();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

pub fn rel_diff_vec(a: &CVector, b: &CVector) -> f64 {
    let denom = b.norm();
    let num = (a - b).norm();
    if denom == 0.0 {
        num
    } else {
        num / denom
    }
}

/// Replace `m` by `(m + m^H) / 2`.
pub fn hermitize(m: &mut CMatrix) {
    let n = m.nrows();
    for i in 0..n {
        m[(i, i)] = C64::new(m[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let norm = m.norm();
    let d = (m - m.adjoint()).norm();
    if norm == 0.0 {
        d
    } else {
        d / norm
    }
}

/// Pivot test of an outer-product Cholesky sweep. nalgebra's complex Cholesky takes
/// complex square roots of negative pivots instead of failing, so definiteness is
/// checked here first.
pub fn is_positive_definite(m: &CMatrix) -> bool {
    let n = m.nrows();
    if n != m.ncols() {
        return false;
    }
    let mut l = m.clone();
    for k in 0..n {
        let pivot = l[(k, k)].re;
        if !(pivot > 0.0) || !pivot.is_finite() {
            return false;
        }
        let d = pivot.sqrt();
        for i in k..n {
            l[(i, k)] /= d;
        }
        for j in (k + 1)..n {
            let ljk = l[(j, k)].conj();
            for i in j..n {
                let v = l[(i, k)] * ljk;
                l[(i, j)] -= v;
            }
        }
    }
    true
}

pub(crate) fn checked_cholesky(m: &CMatrix) -> Result<nalgebra::Cholesky<C64, nalgebra::Dyn>> {
    if !is_positive_definite(m) {
        return Err(OparcError::NotPositiveDefinite("nonpositive Cholesky pivot".into()));
    }
    m.clone()
        .cholesky()
        .ok_or_else(|| OparcError::NotPositiveDefinite("Cholesky factorization failed".into()))
}

/// Inverse of a Hermitian positive definite matrix through its Cholesky factor.
pub fn hpd_inverse(m: &CMatrix) -> Result<CMatrix> {
    let chol = checked_cholesky(m)?;
    let mut inv = chol.inverse();
    hermitize(&mut inv);
    Ok(inv)
}

/// Solve `m x = b` for Hermitian positive definite `m`.
pub fn hpd_solve(m: &CMatrix, b: &CVector) -> Result<CVector> {
    Ok(checked_cholesky(m)?.solve(b))
}

/// Eigenvalues of a Hermitian matrix, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut h = m.clone();
    hermitize(&mut h);
    let mut ev: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(f64::total_cmp);
    ev
}

/// Ratio of the smallest to the largest singular value (0 for an empty or zero matrix).
pub fn relative_min_singular_value(m: &CMatrix) -> f64 {
    if m.ncols() == 0 || m.nrows() == 0 {
        return 0.0;
    }
    let sv = m.clone().svd(false, false).singular_values;
    let max = sv.iter().copied().fold(0.0, f64::max);
    let min = sv.iter().copied().fold(f64::INFINITY, f64::min);
    if max == 0.0 {
        0.0
    } else {
        min / max
    }
}

/// Orthonormal basis (N x (N-K)) of the orthogonal complement of the column span of `a` (N x K).
pub fn orthogonal_complement(a: &CMatrix) -> CMatrix {
    let n = a.nrows();
    let k = a.ncols();
    // Left singular vectors of [a | 0] via SVD of a a^H would lose precision; use the
    // full SVD of the N x N padded matrix instead.
    let mut padded = CMatrix::zeros(n, n);
    padded.columns_mut(0, k).copy_from(a);
    let svd = padded.svd(true, false);
    let u = svd.u.expect("left singular vectors requested");
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let mut basis = CMatrix::zeros(n, n - k);
    for (col, &idx) in order[k..].iter().enumerate() {
        basis.set_column(col, &u.column(idx));
    }
    basis
}

/// Real lift of a complex matrix: `[[Re, -Im], [Im, Re]]`.
pub fn lift_matrix(m: &CMatrix) -> DMatrix<f64> {
    let (r, c) = m.shape();
    let mut out = DMatrix::zeros(2 * r, 2 * c);
    for i in 0..r {
        for j in 0..c {
            let v = m[(i, j)];
            out[(i, j)] = v.re;
            out[(i, j + c)] = -v.im;
            out[(i + r, j)] = v.im;
            out[(i + r, j + c)] = v.re;
        }
    }
    out
}

/// Real lift of a complex vector: `[Re; Im]`.
pub fn lift_vector(v: &CVector) -> DVector<f64> {
    let m = v.len();
    let mut out = DVector::zeros(2 * m);
    for i in 0..m {
        out[i] = v[i].re;
        out[i + m] = v[i].im;
    }
    out
}

/// Inverse of [`lift_vector`].
pub fn delift_vector(z: &DVector<f64>) -> CVector {
    let m = z.len() / 2;
    CVector::from_fn(m, |i, _| C64::new(z[i], z[i + m]))
}

pub fn symmetrize_real(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}
