//! Dense multivariate Gaussians: conditioning, marginals, sampling, densities.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{dim_err, Error, Result};
use crate::linalg;
use crate::rng;

/// Sorted, duplicate-free coordinate selection inside an ambient dimension.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct IndexSet {
    indices: Vec<usize>,
    dim: usize,
}

impl IndexSet {
    pub fn new(mut indices: Vec<usize>, dim: usize) -> Result<Self> {
        indices.sort_unstable();
        let before = indices.len();
        indices.dedup();
        if indices.len() != before {
            return Err(Error::InvalidParameter("index set contains duplicates".into()));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= dim) {
            return Err(Error::InvalidParameter(format!("index {bad} out of bounds for dimension {dim}")));
        }
        Ok(Self { indices, dim })
    }

    pub fn range(start: usize, end: usize, dim: usize) -> Result<Self> {
        Self::new((start..end).collect(), dim)
    }

    pub fn complement(&self) -> IndexSet {
        let indices = (0..self.dim).filter(|i| self.indices.binary_search(i).is_err()).collect();
        IndexSet { indices, dim: self.dim }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.indices.binary_search(&i).is_ok()
    }
}

/// Multivariate normal stored in covariance form.
///
/// The covariance may be rank deficient (point masses, immutable features);
/// the cached factor is then a semidefinite Cholesky factor with zero columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Gaussian {
    mean: DVector<f64>,
    cov: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl Gaussian {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>) -> Result<Self> {
        if cov.nrows() != mean.len() {
            return Err(dim_err("covariance rows", mean.len(), cov.nrows()));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("mean has non-finite entries".into()));
        }
        let cov = linalg::checked_symmetric(&cov)?;
        let scale = linalg::inf_norm(&cov).max(1.0);
        if let Some(factor) = linalg::cholesky(&cov) {
            return Ok(Self { mean, cov, factor });
        }
        let cov = linalg::clamp_psd(&cov, 1e-9 * scale)?;
        let factor = linalg::cholesky_semidefinite(&cov)
            .ok_or_else(|| Error::Factorization("semidefinite factorization failed".into()))?;
        Ok(Self { mean, cov, factor })
    }

    pub fn standard(d: usize) -> Self {
        Self {
            mean: DVector::zeros(d),
            cov: DMatrix::identity(d, d),
            factor: DMatrix::identity(d, d),
        }
    }

    pub fn point_mass(mean: DVector<f64>) -> Self {
        let d = mean.len();
        Self { mean, cov: DMatrix::zeros(d, d), factor: DMatrix::zeros(d, d) }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn cov(&self) -> &DMatrix<f64> {
        &self.cov
    }

    /// Lower-triangular `L` with `L·Lᵀ = cov`.
    pub fn factor(&self) -> &DMatrix<f64> {
        &self.factor
    }

    fn is_full_rank(&self) -> bool {
        self.factor.diagonal().iter().all(|&d| d > 0.0)
    }

    /// Distribution of the unobserved coordinates given `values` at `observed`.
    ///
    /// Uses the pseudo-inverse of the observed block (cutoff `1e-10·trace`),
    /// so perfectly correlated coordinates come out as exact point masses.
    pub fn condition(&self, observed: &IndexSet, values: &DVector<f64>) -> Result<Gaussian> {
        if observed.dim() != self.dim() {
            return Err(dim_err("index set ambient dimension", self.dim(), observed.dim()));
        }
        if observed.len() != values.len() {
            return Err(dim_err("conditioning values", observed.len(), values.len()));
        }
        if observed.len() >= self.dim() {
            return Err(Error::InvalidParameter("cannot condition on every coordinate".into()));
        }
        let free = observed.complement();
        let (o, f) = (observed.indices(), free.indices());
        let s_oo = linalg::select(&self.cov, o, o);
        let s_fo = linalg::select(&self.cov, f, o);
        let s_ff = linalg::select(&self.cov, f, f);
        let residual = values - linalg::select_vec(&self.mean, o);
        let cutoff = 1e-10 * s_oo.trace().max(0.0);
        let (pinv, null) = linalg::pseudo_inverse(&s_oo, cutoff);
        for u in &null {
            let deviation = u.dot(&residual).abs();
            if deviation > 1e-6 {
                return Err(Error::InconsistentConditioning(deviation));
            }
        }
        let gain = &s_fo * &pinv;
        let mean = linalg::select_vec(&self.mean, f) + &gain * residual;
        let cov = s_ff - &gain * s_fo.transpose();
        Gaussian::new(mean, linalg::symmetrize(&cov))
    }

    pub fn marginalize(&self, keep: &IndexSet) -> Result<Gaussian> {
        if keep.dim() != self.dim() {
            return Err(dim_err("index set ambient dimension", self.dim(), keep.dim()));
        }
        if keep.is_empty() {
            return Err(Error::InvalidParameter("marginal must keep at least one coordinate".into()));
        }
        let k = keep.indices();
        let mean = linalg::select_vec(&self.mean, k);
        let cov = linalg::select(&self.cov, k, k);
        let factor = linalg::cholesky(&cov)
            .or_else(|| linalg::cholesky_semidefinite(&cov))
            .ok_or_else(|| Error::Factorization("marginal covariance factorization failed".into()))?;
        Ok(Gaussian { mean, cov, factor })
    }

    /// `n` i.i.d. draws as rows of an `n×d` matrix, from stream `(seed, 0)`.
    pub fn sample(&self, n: usize, seed: u64) -> DMatrix<f64> {
        self.sample_with(&mut rng::stream(seed, 0), n)
    }

    pub fn sample_with(&self, rng: &mut rng::Stream, n: usize) -> DMatrix<f64> {
        let z = rng::normal_matrix(rng, n, self.dim());
        let mut out = z * self.factor.transpose();
        for mut row in out.row_iter_mut() {
            row += self.mean.transpose();
        }
        out
    }

    pub fn log_pdf(&self, x: &DVector<f64>) -> Result<f64> {
        if x.len() != self.dim() {
            return Err(dim_err("point", self.dim(), x.len()));
        }
        if !self.is_full_rank() {
            return Err(Error::Factorization("log density of a singular Gaussian".into()));
        }
        let l = &self.factor;
        let diff = x - &self.mean;
        let z = linalg::solve_lower(l, &DMatrix::from_column_slice(diff.len(), 1, diff.as_slice()));
        let maha = z.iter().map(|v| v * v).sum::<f64>();
        let log_det = 2.0 * l.diagonal().iter().map(|v| v.ln()).sum::<f64>();
        Ok(-0.5 * (self.dim() as f64 * (2.0 * PI).ln() + log_det + maha))
    }

    /// Squared Mahalanobis distance under the (pseudo-)inverse covariance.
    pub fn mahalanobis_sq(&self, x: &DVector<f64>) -> f64 {
        let diff = x - &self.mean;
        if self.is_full_rank() {
            let z = linalg::solve_lower(&self.factor, &DMatrix::from_column_slice(diff.len(), 1, diff.as_slice()));
            return z.iter().map(|v| v * v).sum();
        }
        let cutoff = 1e-10 * self.cov.trace().max(0.0);
        let (pinv, _) = linalg::pseudo_inverse(&self.cov, cutoff);
        diff.dot(&(pinv * &diff)).max(0.0)
    }

    /// Inverse covariance; fails for singular Gaussians.
    pub fn precision(&self) -> Result<DMatrix<f64>> {
        if !self.is_full_rank() {
            return Err(Error::Factorization("singular covariance has no precision".into()));
        }
        let d = self.dim();
        Ok(linalg::symmetrize(&linalg::cholesky_solve(&self.factor, &DMatrix::identity(d, d))))
    }
}
