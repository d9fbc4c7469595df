//! Dense symmetric linear algebra used throughout the engine.

use alloc::format;
use alloc::vec::Vec;
use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Lower-triangular factor together with the diagonal shift that was needed.
#[derive(Debug, Clone, PartialEq)]
pub struct JitteredFactor {
    pub factor: DMatrix<f64>,
    pub jitter: f64,
}

/// Largest absolute row sum.
pub fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Checks symmetry at `1e-9·max(1, ‖m‖∞)` and returns the symmetrized matrix.
pub fn checked_symmetric(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if m.nrows() != m.ncols() {
        return Err(Error::Dimension(format!(
            "expected a square matrix, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidData("matrix has non-finite entries".into()));
    }
    let asym = max_asymmetry(m);
    if asym > 1e-9 * inf_norm(m).max(1.0) {
        return Err(Error::NotSymmetric(asym));
    }
    Ok(symmetrize(m))
}

/// Cholesky factorization treating pivots at or below `tol` as failure
/// (`semidefinite = false`) or as exact zeros (`semidefinite = true`).
fn cholesky_impl(m: &DMatrix<f64>, tol: f64, semidefinite: bool) -> Option<DMatrix<f64>> {
    let n = m.nrows();
    let mut l = DMatrix::<f64>::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !d.is_finite() {
            return None;
        }
        if d <= tol {
            if semidefinite && d >= -1e3 * tol {
                continue;
            }
            return None;
        }
        let pivot = d.sqrt();
        l[(j, j)] = pivot;
        for i in (j + 1)..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / pivot;
        }
    }
    Some(l)
}

fn pivot_tolerance(m: &DMatrix<f64>) -> f64 {
    let max_diag = m.diagonal().iter().fold(0.0_f64, |a, &b| a.max(b.abs()));
    1e-13 * max_diag.max(1e-300)
}

/// Strict Cholesky factor; `None` when the matrix is not numerically PD.
pub fn cholesky(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    cholesky_impl(m, pivot_tolerance(m), false)
}

/// Cholesky factor of a PSD matrix that zeroes the columns of vanishing pivots,
/// so `L·Lᵀ` reproduces rank-deficient inputs exactly.
pub fn cholesky_semidefinite(m: &DMatrix<f64>) -> Option<DMatrix<f64>> {
    let tol = 1e-12 * m.diagonal().iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
    cholesky_impl(m, tol, true)
}

/// Factorizes `m + c·I` for the smallest `c` in `{0, jitter, 10·jitter, …}`
/// not exceeding `1e6·jitter`.
pub fn cholesky_psd(m: &DMatrix<f64>, jitter: f64) -> Result<JitteredFactor> {
    if !(jitter >= 0.0) || !jitter.is_finite() {
        return Err(Error::InvalidParameter(format!("jitter must be >= 0, got {jitter}")));
    }
    let m = checked_symmetric(m)?;
    let n = m.nrows();
    let mut shift = 0.0;
    loop {
        let shifted = &m + DMatrix::<f64>::identity(n, n) * shift;
        let tol = if shift == 0.0 { pivot_tolerance(&m) } else { 0.0 };
        if let Some(factor) = cholesky_impl(&shifted, tol, false) {
            return Ok(JitteredFactor { factor, jitter: shift });
        }
        if jitter == 0.0 {
            return Err(Error::Factorization("matrix is singular and no jitter was allowed".into()));
        }
        shift = if shift == 0.0 { jitter } else { shift * 10.0 };
        if shift > jitter * 1e6 * (1.0 + 1e-12) {
            return Err(Error::Factorization(format!(
                "no diagonal shift up to {:e} makes the matrix positive definite",
                jitter * 1e6
            )));
        }
    }
}

/// Solves `L·y = b` for lower-triangular `L`.
pub fn solve_lower(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut y = b.clone();
    for c in 0..b.ncols() {
        for i in 0..n {
            let mut s = y[(i, c)];
            for k in 0..i {
                s -= l[(i, k)] * y[(k, c)];
            }
            y[(i, c)] = s / l[(i, i)];
        }
    }
    y
}

/// Solves `Lᵀ·x = y` for lower-triangular `L`.
pub fn solve_upper_t(l: &DMatrix<f64>, y: &DMatrix<f64>) -> DMatrix<f64> {
    let n = l.nrows();
    let mut x = y.clone();
    for c in 0..y.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= l[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = s / l[(i, i)];
        }
    }
    x
}

pub fn cholesky_solve(l: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    solve_upper_t(l, &solve_lower(l, b))
}

pub fn cholesky_solve_vec(l: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let m = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    DVector::from_column_slice(cholesky_solve(l, &m).as_slice())
}

/// Inverse of a symmetric positive-definite matrix.
pub fn spd_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let l = cholesky(m).ok_or_else(|| Error::Factorization("matrix is not positive definite".into()))?;
    let n = m.nrows();
    Ok(symmetrize(&cholesky_solve(&l, &DMatrix::identity(n, n))))
}

/// Symmetric eigen-decomposition with eigenvalues sorted ascending.
pub fn sym_eigen(m: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = m.nrows();
    if n == 0 {
        return (DVector::zeros(0), DMatrix::zeros(0, 0));
    }
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = DVector::from_fn(n, |i, _| eig.eigenvalues[order[i]]);
    let vectors = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    (values, vectors)
}

pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    let (values, _) = sym_eigen(m);
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Moore-Penrose inverse of a symmetric PSD matrix plus the orthonormal basis
/// of the directions whose eigenvalue fell under `cutoff`.
pub fn pseudo_inverse(m: &DMatrix<f64>, cutoff: f64) -> (DMatrix<f64>, Vec<DVector<f64>>) {
    let n = m.nrows();
    let (values, vectors) = sym_eigen(m);
    let mut pinv = DMatrix::<f64>::zeros(n, n);
    let mut null = Vec::new();
    for k in 0..n {
        let v = vectors.column(k);
        if values[k] > cutoff {
            pinv += (v * v.transpose()) / values[k];
        } else {
            null.push(v.into_owned());
        }
    }
    (symmetrize(&pinv), null)
}

/// Projects a symmetric matrix onto the PSD cone when its negative
/// eigenvalues are within `tol`; errors otherwise.
pub fn clamp_psd(m: &DMatrix<f64>, tol: f64) -> Result<DMatrix<f64>> {
    let (values, vectors) = sym_eigen(m);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -tol {
        return Err(Error::NotPsd(min));
    }
    if min >= 0.0 {
        return Ok(m.clone());
    }
    let clamped = DMatrix::from_diagonal(&values.map(|v| v.max(0.0)));
    Ok(symmetrize(&(&vectors * clamped * vectors.transpose())))
}

pub fn select(m: &DMatrix<f64>, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), cols.len(), |i, j| m[(rows[i], cols[j])])
}

pub fn select_vec(v: &DVector<f64>, idx: &[usize]) -> DVector<f64> {
    DVector::from_fn(idx.len(), |i, _| v[idx[i]])
}

pub fn max_abs_diff(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
