//! Mutable but non-actionable features.
//!
//! Such features are dropped from the counterfactual posterior, then
//! re-attached through a linear model `e' = A·c' + b + ε` fitted on training
//! data, giving `p(x' | x, y') = p(e' | c') p(c' | x, y')`.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::gaussian::{Gaussian, IndexSet};
use crate::linalg;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "class")]
pub enum FeatureClass {
    Mutable,
    Immutable,
    Nonactionable { ancestors: Vec<usize> },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FeaturePolicy {
    classes: Vec<FeatureClass>,
}

impl FeaturePolicy {
    pub fn new(classes: Vec<FeatureClass>) -> Result<Self> {
        let n = classes.len();
        for (i, class) in classes.iter().enumerate() {
            let FeatureClass::Nonactionable { ancestors } = class else { continue };
            if ancestors.is_empty() {
                return Err(Error::InvalidParameter(format!("non-actionable feature {i} has no ancestors")));
            }
            for &a in ancestors {
                if a >= n {
                    return Err(Error::InvalidParameter(format!("feature {i} lists ancestor {a} out of range")));
                }
                if matches!(classes[a], FeatureClass::Nonactionable { .. }) {
                    return Err(Error::InvalidParameter(format!(
                        "feature {i} depends on feature {a}, which is itself non-actionable"
                    )));
                }
            }
        }
        Ok(Self { classes })
    }

    /// Every feature mutable.
    pub fn all_mutable(n: usize) -> Self {
        Self { classes: alloc::vec![FeatureClass::Mutable; n] }
    }

    pub fn classes(&self) -> &[FeatureClass] {
        &self.classes
    }

    pub fn dim(&self) -> usize {
        self.classes.len()
    }

    pub fn immutable_mask(&self) -> Vec<bool> {
        self.classes.iter().map(|c| matches!(c, FeatureClass::Immutable)).collect()
    }

    pub fn has_nonactionable(&self) -> bool {
        self.classes.iter().any(|c| matches!(c, FeatureClass::Nonactionable { .. }))
    }

    pub fn split(&self) -> SplitMap {
        let (mut kept, mut dropped) = (Vec::new(), Vec::new());
        for (i, c) in self.classes.iter().enumerate() {
            match c {
                FeatureClass::Nonactionable { .. } => dropped.push(i),
                _ => kept.push(i),
            }
        }
        SplitMap { kept, dropped, dim: self.dim() }
    }
}

/// Positions of the actionable (`kept`) and non-actionable (`dropped`)
/// coordinates in the full feature vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitMap {
    pub kept: Vec<usize>,
    pub dropped: Vec<usize>,
    pub dim: usize,
}

/// Marginal over the actionable coordinates.
pub fn split_posterior(post: &Gaussian, policy: &FeaturePolicy) -> Result<(Gaussian, SplitMap)> {
    if post.dim() != policy.dim() {
        return Err(dim_err("posterior", policy.dim(), post.dim()));
    }
    let map = policy.split();
    if map.dropped.is_empty() {
        return Ok((post.clone(), map));
    }
    let marginal = post.marginalize(&IndexSet::new(map.kept.clone(), map.dim)?)?;
    Ok((marginal, map))
}

/// `e = A·c + b + ε`, `ε ~ N(0, residual_cov)`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearConditional {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub residual_cov: DMatrix<f64>,
}

/// Least-squares fit of each `e` column on the `c` columns plus an intercept.
/// The residual covariance uses `m − |c| − 1` degrees of freedom plus `jitter·I`.
pub fn fit_conditional(rows: &DMatrix<f64>, c_idx: &[usize], e_idx: &[usize], jitter: f64) -> Result<LinearConditional> {
    let m = rows.nrows();
    let p = c_idx.len();
    if m < p + 2 {
        return Err(Error::InvalidData(format!("need at least {} rows to fit the conditional, got {m}", p + 2)));
    }
    if let Some(&bad) = c_idx.iter().chain(e_idx).find(|&&i| i >= rows.ncols()) {
        return Err(Error::InvalidParameter(format!("column {bad} out of range")));
    }
    if !(jitter >= 0.0) {
        return Err(Error::InvalidParameter(format!("jitter must be >= 0, got {jitter}")));
    }
    let design = DMatrix::from_fn(m, p + 1, |i, j| if j == 0 { 1.0 } else { rows[(i, c_idx[j - 1])] });
    let targets = linalg::select(rows, &(0..m).collect::<Vec<_>>(), e_idx);
    let (q, r) = gram_schmidt(&design, c_idx)?;
    // β = R⁻¹ Qᵀ E
    let qte = q.tr_mul(&targets);
    let beta = solve_upper(&r, &qte);
    let residuals = &targets - &design * &beta;
    let dof = (m - p - 1) as f64;
    let mut cov = residuals.tr_mul(&residuals) / dof;
    for i in 0..e_idx.len() {
        cov[(i, i)] += jitter;
    }
    Ok(LinearConditional {
        a: beta.rows(1, p).transpose(),
        b: beta.row(0).transpose(),
        residual_cov: linalg::symmetrize(&cov),
    })
}

/// Fits every non-actionable feature on its declared ancestors; the result
/// is expressed over all actionable coordinates (zeros for non-ancestors and
/// for ancestors that are linear combinations of the others).
pub fn fit_policy_conditional(rows: &DMatrix<f64>, policy: &FeaturePolicy, jitter: f64) -> Result<LinearConditional> {
    if rows.ncols() != policy.dim() {
        return Err(dim_err("feature columns", policy.dim(), rows.ncols()));
    }
    let map = policy.split();
    let k = map.dropped.len();
    let mut a = DMatrix::zeros(k, map.kept.len());
    let mut b = DVector::zeros(k);
    let mut residuals = DMatrix::zeros(rows.nrows(), k);
    let mut dof = f64::INFINITY;
    for (r, &e) in map.dropped.iter().enumerate() {
        let FeatureClass::Nonactionable { ancestors } = &policy.classes()[e] else { unreachable!() };
        // ancestors spanning a categorical feature are collinear with the
        // intercept; redundant columns are dropped
        let ancestors: Vec<usize> = match fit_conditional(rows, ancestors, &[e], 0.0) {
            Err(Error::RankDeficient(cols)) if cols.len() < ancestors.len() => {
                ancestors.iter().copied().filter(|a| !cols.contains(a)).collect()
            }
            _ => ancestors.clone(),
        };
        let ancestors = &ancestors;
        let fit = fit_conditional(rows, ancestors, &[e], 0.0)?;
        b[r] = fit.b[0];
        for (j, &anc) in ancestors.iter().enumerate() {
            let col = map.kept.binary_search(&anc).expect("ancestors are actionable");
            a[(r, col)] = fit.a[(0, j)];
        }
        for i in 0..rows.nrows() {
            let pred: f64 = fit.b[0] + ancestors.iter().enumerate().map(|(j, &anc)| fit.a[(0, j)] * rows[(i, anc)]).sum::<f64>();
            residuals[(i, r)] = rows[(i, e)] - pred;
        }
        dof = dof.min((rows.nrows() - ancestors.len() - 1) as f64);
    }
    let mut cov = residuals.tr_mul(&residuals) / dof;
    for i in 0..k {
        cov[(i, i)] += jitter;
    }
    Ok(LinearConditional { a, b, residual_cov: linalg::symmetrize(&cov) })
}

/// Thin QR by modified Gram-Schmidt; dependent columns are reported by
/// feature index (column 0 is the intercept).
fn gram_schmidt(x: &DMatrix<f64>, c_idx: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (m, p) = x.shape();
    let mut q = x.clone();
    let mut r = DMatrix::zeros(p, p);
    let mut dependent = Vec::new();
    for j in 0..p {
        let original = x.column(j).norm();
        for k in 0..j {
            let proj = q.column(k).dot(&q.column(j));
            r[(k, j)] = proj;
            let qk = q.column(k).into_owned();
            q.column_mut(j).axpy(-proj, &qk, 1.0);
        }
        let norm = q.column(j).norm();
        if norm <= 1e-10 * original.max(f64::MIN_POSITIVE) || original == 0.0 {
            if j > 0 {
                dependent.push(c_idx[j - 1]);
            }
            q.column_mut(j).fill(0.0);
            continue;
        }
        r[(j, j)] = norm;
        q.column_mut(j).scale_mut(1.0 / norm);
    }
    if !dependent.is_empty() || m < p {
        return Err(Error::RankDeficient(dependent));
    }
    Ok((q, r))
}

fn solve_upper(r: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let n = r.nrows();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut s = x[(i, c)];
            for k in (i + 1)..n {
                s -= r[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = s / r[(i, i)];
        }
    }
    x
}

/// Joint over the full feature vector from the actionable marginal and the
/// linear conditional of the non-actionable block.
pub fn recompose(marginal: &Gaussian, cond: &LinearConditional, map: &SplitMap) -> Result<Gaussian> {
    let (kc, ke) = (map.kept.len(), map.dropped.len());
    if marginal.dim() != kc {
        return Err(dim_err("actionable marginal", kc, marginal.dim()));
    }
    if ke == 0 {
        return Ok(marginal.clone());
    }
    if cond.a.shape() != (ke, kc) || cond.b.len() != ke || cond.residual_cov.shape() != (ke, ke) {
        return Err(Error::Dimension(format!("conditional must map {kc} actionable to {ke} dependent features")));
    }
    let mc = marginal.mean();
    let sc = marginal.cov();
    let me = &cond.a * mc + &cond.b;
    let sce = sc * cond.a.transpose();
    let see = &cond.residual_cov + &cond.a * &sce;
    let mut pos = alloc::vec![(false, 0usize); map.dim];
    for (i, &k) in map.kept.iter().enumerate() {
        pos[k] = (false, i);
    }
    for (i, &e) in map.dropped.iter().enumerate() {
        pos[e] = (true, i);
    }
    let mean = DVector::from_fn(map.dim, |i, _| match pos[i] {
        (false, a) => mc[a],
        (true, a) => me[a],
    });
    let cov = DMatrix::from_fn(map.dim, map.dim, |i, j| match (pos[i], pos[j]) {
        ((false, a), (false, b)) => sc[(a, b)],
        ((false, a), (true, b)) => sce[(a, b)],
        ((true, a), (false, b)) => sce[(b, a)],
        ((true, a), (true, b)) => see[(a, b)],
    });
    Gaussian::new(mean, linalg::symmetrize(&cov))
}
