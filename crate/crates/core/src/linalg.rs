//! Thin dense linear-algebra helpers over `faer`.
//!
//! Everything runs with sequential parallelism; concurrency in this crate lives
//! at the replication level, never inside a factorization.

use faer::linalg::matmul::matmul;
use faer::linalg::triangular_solve::{
    solve_lower_triangular_in_place, solve_upper_triangular_in_place,
};
use faer::{Accum, Mat, MatMut, MatRef, Par, Side};

use crate::error::{Error, Result};

/// Lower Cholesky factor, or `None` when the matrix is not numerically SPD.
pub fn cholesky(a: MatRef<'_, f64>) -> Option<Mat<f64>> {
    let llt = a.llt(Side::Lower).ok()?;
    let l = llt.L();
    let n = l.nrows();
    // faer leaves the strict upper triangle untouched; zero it so the factor
    // can be used with general matrix products.
    Some(Mat::from_fn(n, n, |i, j| if j <= i { l[(i, j)] } else { 0.0 }))
}

/// Cholesky of `a + jitter * I`, multiplying the jitter by ten until the
/// factorization succeeds. Returns the factor and the jitter actually used.
pub fn cholesky_jittered(a: MatRef<'_, f64>, jitter: f64, max_tries: usize) -> Result<(Mat<f64>, f64)> {
    let n = a.nrows();
    let mut eps = jitter;
    for _ in 0..max_tries.max(1) {
        let mut m = a.to_owned();
        for i in 0..n {
            m[(i, i)] += eps;
        }
        if let Some(l) = cholesky(m.as_ref()) {
            return Ok((l, eps));
        }
        eps = if eps > 0.0 { eps * 10.0 } else { 1e-12 };
    }
    Err(Error::numeric(format!(
        "matrix of order {n} is not positive definite even with jitter {eps:.3e}"
    )))
}

/// Solves `L X = B` in place.
pub fn solve_lower(l: MatRef<'_, f64>, rhs: MatMut<'_, f64>) {
    solve_lower_triangular_in_place(l, rhs, Par::Seq);
}

/// Solves `Lᵀ X = B` in place.
pub fn solve_lower_transpose(l: MatRef<'_, f64>, rhs: MatMut<'_, f64>) {
    solve_upper_triangular_in_place(l.transpose(), rhs, Par::Seq);
}

pub fn solve_lower_vec(l: MatRef<'_, f64>, b: &[f64]) -> Vec<f64> {
    let mut m = col(b);
    solve_lower(l, m.as_mut());
    m.col_as_slice(0).to_vec()
}

pub fn solve_lower_transpose_vec(l: MatRef<'_, f64>, b: &[f64]) -> Vec<f64> {
    let mut m = col(b);
    solve_lower_transpose(l, m.as_mut());
    m.col_as_slice(0).to_vec()
}

/// `(L Lᵀ)⁻¹ b`.
pub fn cholesky_solve_vec(l: MatRef<'_, f64>, b: &[f64]) -> Vec<f64> {
    let z = solve_lower_vec(l, b);
    solve_lower_transpose_vec(l, &z)
}

/// Sum of log diagonal entries of a triangular factor.
pub fn log_diag_sum(l: MatRef<'_, f64>) -> f64 {
    (0..l.nrows()).map(|i| l[(i, i)].ln()).sum()
}

pub fn col(v: &[f64]) -> Mat<f64> {
    Mat::from_fn(v.len(), 1, |i, _| v[i])
}

pub fn matvec(a: MatRef<'_, f64>, x: &[f64]) -> Vec<f64> {
    assert_eq!(a.ncols(), x.len());
    let xm = col(x);
    let mut out = Mat::<f64>::zeros(a.nrows(), 1);
    matmul(out.as_mut(), Accum::Replace, a, xm.as_ref(), 1.0, Par::Seq);
    out.col_as_slice(0).to_vec()
}

/// `A B`.
pub fn mul(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    let mut out = Mat::<f64>::zeros(a.nrows(), b.ncols());
    matmul(out.as_mut(), Accum::Replace, a, b, 1.0, Par::Seq);
    out
}

/// `Aᵀ B`.
pub fn mul_tn(a: MatRef<'_, f64>, b: MatRef<'_, f64>) -> Mat<f64> {
    mul(a.transpose(), b)
}

/// `dst += alpha * A B`.
pub fn mul_add(dst: MatMut<'_, f64>, a: MatRef<'_, f64>, b: MatRef<'_, f64>, alpha: f64) {
    matmul(dst, Accum::Add, a, b, alpha, Par::Seq);
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Replaces `a` by `(a + aᵀ) / 2`.
pub fn symmetrize(a: &mut Mat<f64>) {
    let n = a.nrows();
    for j in 0..n {
        for i in (j + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Eigenvalues of a symmetric matrix in nondecreasing order.
pub fn symmetric_eigenvalues(a: MatRef<'_, f64>) -> Result<Vec<f64>> {
    a.self_adjoint_eigenvalues(Side::Lower)
        .map_err(|e| Error::numeric(format!("eigenvalue decomposition failed: {e:?}")))
}

/// Dense inverse of an SPD matrix via Cholesky (test and oracle use only).
pub fn spd_inverse(a: MatRef<'_, f64>) -> Result<Mat<f64>> {
    let l = cholesky(a).ok_or_else(|| Error::numeric("matrix is not positive definite"))?;
    let n = a.nrows();
    let mut id = Mat::<f64>::identity(n, n);
    solve_lower(l.as_ref(), id.as_mut());
    solve_lower_transpose(l.as_ref(), id.as_mut());
    Ok(id)
}
