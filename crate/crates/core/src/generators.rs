//! Counterfactual generators behind one request/result interface.

use alloc::collections::BinaryHeap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::actionability::{recompose, split_posterior, FeaturePolicy, LinearConditional};
use crate::error::{dim_err, Error, Result};
use crate::gaussian::Gaussian;
use crate::laplace::{posterior_laplace, LaplaceClassPrior};
use crate::linalg;
use crate::models::SplitClassifier;
use crate::objective::{Fidelity, Objective, ObjectiveConfig, Variant};
use crate::optim::{adam_minimize, AdamConfig};
use crate::posterior::{posterior_pgm2, LinearLikelihood};
use crate::prior::{DataPrior, JointCfPrior};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct GenRequest {
    pub reference: DVector<f64>,
    pub target: usize,
    pub count: usize,
    pub seed: u64,
    /// Minimum target probability for a counterfactual to count as valid.
    pub threshold: f64,
}

impl GenRequest {
    pub fn new(reference: DVector<f64>, target: usize, count: usize, seed: u64) -> Self {
        Self { reference, target, count, seed, threshold: 0.5 }
    }

    fn validate(&self, dim: usize) -> Result<()> {
        if self.count == 0 {
            return Err(Error::InvalidParameter("count must be at least 1".into()));
        }
        if self.reference.len() != dim {
            return Err(dim_err("reference", dim, self.reference.len()));
        }
        if self.reference.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidData("reference has non-finite entries".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub point: DVector<f64>,
    /// `p(target | point)`; `None` when no classifier judges the point.
    pub target_probability: Option<f64>,
    pub valid: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenResult {
    pub counterfactuals: Vec<Candidate>,
    pub method: String,
}

impl GenResult {
    fn judge(points: Vec<DVector<f64>>, clf: Option<&SplitClassifier>, req: &GenRequest, method: String) -> Self {
        let counterfactuals = points
            .into_iter()
            .map(|point| {
                let p = clf.map(|c| c.target_probability(&point, req.target));
                Candidate { valid: p.is_none_or(|p| p >= req.threshold), target_probability: p, point }
            })
            .collect();
        Self { counterfactuals, method }
    }

    pub fn success_rate(&self) -> f64 {
        let n = self.counterfactuals.len();
        if n == 0 {
            return 0.0;
        }
        self.counterfactuals.iter().filter(|c| c.valid).count() as f64 / n as f64
    }
}

/// Distance used by growing spheres, FACE and the diversity penalty.
#[derive(Debug, Clone, PartialEq)]
pub enum Metric {
    Euclidean,
    /// `‖d‖² = dᵀ M d` with `M = ((1 − α²)Σ)⁻¹`, the precision of `x' | x`
    /// under an unmasked joint prior.
    Mahalanobis { cov: DMatrix<f64>, precision: DMatrix<f64> },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Euclidean,
    Mahalanobis,
}

impl Metric {
    pub fn mahalanobis(prior: &DataPrior, alpha: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha) {
            return Err(Error::InvalidParameter(format!("alpha must lie in [0, 1), got {alpha}")));
        }
        let cov = &prior.sigma * (1.0 - alpha * alpha);
        let precision = linalg::spd_inverse(&cov)?;
        Ok(Metric::Mahalanobis { cov, precision })
    }

    pub fn from_kind(kind: MetricKind, prior: &DataPrior, alpha: f64) -> Result<Self> {
        match kind {
            MetricKind::Euclidean => Ok(Metric::Euclidean),
            MetricKind::Mahalanobis => Self::mahalanobis(prior, alpha),
        }
    }

    pub fn distance_sq(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        let d = a - b;
        match self {
            Metric::Euclidean => d.norm_squared(),
            Metric::Mahalanobis { precision, .. } => d.dot(&(precision * &d)).max(0.0),
        }
    }

    pub fn distance(&self, a: &DVector<f64>, b: &DVector<f64>) -> f64 {
        self.distance_sq(a, b).sqrt()
    }

    /// `M·d`, the half-gradient of the squared distance.
    fn apply(&self, d: &DVector<f64>) -> DVector<f64> {
        match self {
            Metric::Euclidean => d.clone(),
            Metric::Mahalanobis { precision, .. } => precision * d,
        }
    }
}

/// Where the counterfactual posterior comes from.
#[derive(Debug, Clone, Copy)]
pub enum PosteriorSource<'a> {
    Linear { lik: &'a LinearLikelihood, y_prime: &'a DVector<f64>, joint: &'a JointCfPrior },
    Laplace { class_prior: &'a LaplaceClassPrior, joint: &'a JointCfPrior },
}

/// Non-actionable handling: the policy and the conditional fitted on
/// training data.
#[derive(Debug, Clone, Copy)]
pub struct Actionability<'a> {
    pub policy: &'a FeaturePolicy,
    pub conditional: &'a LinearConditional,
}

/// Counterfactual posterior for the request, after recomposition.
pub fn counterfactual_posterior(
    req: &GenRequest,
    source: PosteriorSource,
    actionability: Option<Actionability>,
) -> Result<Gaussian> {
    let post = match source {
        PosteriorSource::Linear { lik, y_prime, joint } => posterior_pgm2(lik, joint, &req.reference, y_prime)?,
        PosteriorSource::Laplace { class_prior, joint } => posterior_laplace(class_prior, joint, &req.reference)?,
    };
    match actionability {
        Some(act) if act.policy.has_nonactionable() => {
            let (marginal, map) = split_posterior(&post, act.policy)?;
            recompose(&marginal, act.conditional, &map)
        }
        _ => Ok(post),
    }
}

/// Draws `count` samples from the counterfactual posterior (stream `(seed, 0)`).
pub fn gen_posterior_sample(
    req: &GenRequest,
    source: PosteriorSource,
    actionability: Option<Actionability>,
    clf: Option<&SplitClassifier>,
) -> Result<GenResult> {
    let dim = match source {
        PosteriorSource::Linear { joint, .. } | PosteriorSource::Laplace { joint, .. } => joint.dim(),
    };
    req.validate(dim)?;
    let post = counterfactual_posterior(req, source, actionability)?;
    let draws = post.sample(req.count, req.seed);
    let points = draws.row_iter().map(|r| r.transpose()).collect();
    Ok(GenResult::judge(points, clf, req, "posterior-sample".into()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimizeConfig {
    pub objective: ObjectiveConfig,
    pub adam: AdamConfig,
    /// Standard deviation of the seeded start perturbation used when several
    /// points are optimized jointly.
    pub init_jitter: f64,
}

impl Default for OptimizeConfig {
    fn default() -> Self {
        Self { objective: ObjectiveConfig::default(), adam: AdamConfig::default(), init_jitter: 0.05 }
    }
}

/// Minimizes the configured objective from the reference. With `count > 1`
/// the points are optimized jointly, each from a seeded perturbation of the
/// reference, with `−λ·(mean pairwise distance)` added when `λ > 0`.
/// Gradients on immutable coordinates are zeroed.
pub fn gen_optimize(
    req: &GenRequest,
    clf: &SplitClassifier,
    prior: Option<&DataPrior>,
    immutable: &[bool],
    cfg: &OptimizeConfig,
) -> Result<GenResult> {
    let n = clf.input_dim();
    req.validate(n)?;
    if immutable.len() != n {
        return Err(dim_err("immutability mask", n, immutable.len()));
    }
    if req.target >= clf.class_count() {
        return Err(Error::InvalidParameter(format!("target {} exceeds class count", req.target)));
    }
    let fidelity = Fidelity::Classifier { clf, target: req.target };
    let objective = Objective::new(fidelity, req.reference.clone(), prior, cfg.objective)?;
    let metric = match (cfg.objective.variant, prior) {
        (Variant::Wachter, _) | (_, None) => Metric::Euclidean,
        (_, Some(p)) => Metric::Mahalanobis { cov: p.sigma.clone(), precision: objective.precision.clone() },
    };
    let mask = |g: &mut DVector<f64>, offset: usize| {
        for (i, &fixed) in immutable.iter().enumerate() {
            if fixed {
                g[offset + i] = 0.0;
            }
        }
    };
    let k = req.count;
    let mut init = DVector::zeros(n * k);
    let mut stream = rng::stream(req.seed, 0);
    for j in 0..k {
        let mut start = req.reference.clone();
        if k > 1 {
            let mut noise = rng::normal_vector(&mut stream, n) * cfg.init_jitter;
            mask(&mut noise, 0);
            start += noise;
        }
        init.rows_mut(j * n, n).copy_from(&start);
    }
    let lambda = cfg.objective.lambda_div;
    let loss = |z: &DVector<f64>| {
        let mut value = 0.0;
        let mut grad = DVector::zeros(n * k);
        let points: Vec<DVector<f64>> = (0..k).map(|j| z.rows(j * n, n).into_owned()).collect();
        for (j, p) in points.iter().enumerate() {
            let (v, g) = objective.eval(p);
            value += v;
            grad.rows_mut(j * n, n).copy_from(&g);
        }
        if k > 1 && lambda > 0.0 {
            let (v, g) = diversity_penalty(&points, &metric);
            value -= lambda * v;
            grad -= g * lambda;
        }
        for j in 0..k {
            mask(&mut grad, j * n);
        }
        (value, grad)
    };
    let out = adam_minimize(loss, &init, &cfg.adam)?;
    let points = (0..k).map(|j| out.solution.rows(j * n, n).into_owned()).collect();
    let name = match cfg.objective.variant {
        Variant::Wachter => "wachter",
        Variant::Ours => "ours-optimize",
        Variant::Regularized => "regularized",
    };
    Ok(GenResult::judge(points, Some(clf), req, name.into()))
}

/// Mean pairwise distance `(2 / k(k−1)) Σ_{i<j} √(d_ijᵀ M d_ij + s)` and
/// its gradient with respect to the stacked points; `s = 1e-12` keeps the
/// gradient finite for coincident points.
pub fn diversity_penalty(points: &[DVector<f64>], metric: &Metric) -> (f64, DVector<f64>) {
    let k = points.len();
    let n = points.first().map_or(0, |p| p.len());
    let mut grad = DVector::zeros(n * k);
    if k < 2 {
        return (0.0, grad);
    }
    let pairs = (k * (k - 1) / 2) as f64;
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            let d = &points[i] - &points[j];
            let md = metric.apply(&d);
            let dist = (d.dot(&md).max(0.0) + 1e-12).sqrt();
            total += dist;
            let g = md / (dist * pairs);
            let mut gi = grad.rows_mut(i * n, n);
            gi += &g;
            let mut gj = grad.rows_mut(j * n, n);
            gj -= &g;
        }
    }
    (total / pairs, grad)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpheresConfig {
    pub r0: f64,
    pub growth: f64,
    pub per_shell: usize,
    pub max_shells: usize,
}

impl Default for SpheresConfig {
    fn default() -> Self {
        Self { r0: 0.1, growth: 1.3, per_shell: 200, max_shells: 50 }
    }
}

/// Samples shells `r₀·gᵏ⁻¹ ≤ ‖δ‖ < r₀·gᵏ` (the first shell is the ball of
/// radius `r₀`) in the mutable subspace until some samples reach the target,
/// then returns the nearest ones.
pub fn gen_growing_spheres(
    req: &GenRequest,
    clf: &SplitClassifier,
    metric: &Metric,
    immutable: &[bool],
    cfg: &SpheresConfig,
) -> Result<GenResult> {
    let n = clf.input_dim();
    req.validate(n)?;
    if immutable.len() != n {
        return Err(dim_err("immutability mask", n, immutable.len()));
    }
    if !(cfg.r0 > 0.0) || !(cfg.growth > 1.0) || cfg.per_shell == 0 {
        return Err(Error::InvalidParameter("growing spheres needs r0 > 0, growth > 1 and per_shell > 0".into()));
    }
    let name = String::from("growing-spheres");
    if clf.target_probability(&req.reference, req.target) >= req.threshold {
        return Ok(GenResult::judge(alloc::vec![req.reference.clone()], Some(clf), req, name));
    }
    let free: Vec<usize> = (0..n).filter(|&i| !immutable[i]).collect();
    let d = free.len();
    if d == 0 {
        return Err(Error::NoCounterfactual(0.0));
    }
    // maps a unit-metric offset in the free subspace into feature space
    let transform = match metric {
        Metric::Euclidean => DMatrix::identity(d, d),
        Metric::Mahalanobis { cov, .. } => {
            let sub = linalg::select(cov, &free, &free);
            linalg::cholesky(&sub).ok_or_else(|| Error::Factorization("metric covariance is singular".into()))?
        }
    };
    let mut stream = rng::stream(req.seed, 0);
    let mut inner = 0.0_f64;
    let mut outer = cfg.r0;
    for _ in 0..cfg.max_shells {
        let mut hits: Vec<(f64, usize, DVector<f64>)> = Vec::new();
        for s in 0..cfg.per_shell {
            let dir = rng::normal_vector(&mut stream, d);
            let norm = dir.norm();
            let u = rng::uniform(&mut stream);
            if norm == 0.0 {
                continue;
            }
            let df = d as f64;
            let radius = (u * (outer.powf(df) - inner.powf(df)) + inner.powf(df)).powf(1.0 / df);
            let offset = &transform * (dir * (radius / norm));
            let mut point = req.reference.clone();
            for (j, &i) in free.iter().enumerate() {
                point[i] += offset[j];
            }
            if clf.target_probability(&point, req.target) >= req.threshold {
                hits.push((radius, s, point));
            }
        }
        if !hits.is_empty() {
            hits.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            let points = hits.into_iter().take(req.count).map(|h| h.2).collect();
            return Ok(GenResult::judge(points, Some(clf), req, name));
        }
        inner = outer;
        outer *= cfg.growth;
    }
    Err(Error::NoCounterfactual(inner))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FaceConfig {
    pub k: usize,
}

impl Default for FaceConfig {
    fn default() -> Self {
        Self { k: 20 }
    }
}

/// Mutual k-nearest-neighbour graph as adjacency lists `(node, weight)`.
/// Neighbour ties are broken by the lower row index.
pub fn mutual_knn_graph(rows: &DMatrix<f64>, metric: &Metric, k: usize) -> Vec<Vec<(usize, f64)>> {
    let m = rows.nrows();
    let pts: Vec<DVector<f64>> = rows.row_iter().map(|r| r.transpose()).collect();
    let mut dist = DMatrix::zeros(m, m);
    for i in 0..m {
        for j in (i + 1)..m {
            let v = metric.distance(&pts[i], &pts[j]);
            dist[(i, j)] = v;
            dist[(j, i)] = v;
        }
    }
    let mut is_nn = alloc::vec![alloc::vec![false; m]; m];
    for i in 0..m {
        let mut others: Vec<usize> = (0..m).filter(|&j| j != i).collect();
        others.sort_by(|&a, &b| dist[(i, a)].total_cmp(&dist[(i, b)]).then(a.cmp(&b)));
        for &j in others.iter().take(k) {
            is_nn[i][j] = true;
        }
    }
    (0..m)
        .map(|i| (0..m).filter(|&j| is_nn[i][j] && is_nn[j][i]).map(|j| (j, dist[(i, j)])).collect())
        .collect()
}

#[derive(PartialEq)]
struct Entry(f64, usize);

impl Eq for Entry {}

impl Ord for Entry {
    fn cmp(&self, other: &Self) -> Ordering {
        // min-heap on distance, then on node index
        other.0.total_cmp(&self.0).then(other.1.cmp(&self.1))
    }
}

impl PartialOrd for Entry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// Single-source shortest path lengths; unreachable nodes get `∞`.
pub fn dijkstra(graph: &[Vec<(usize, f64)>], source: usize) -> Vec<f64> {
    let mut dist = alloc::vec![f64::INFINITY; graph.len()];
    let mut heap = BinaryHeap::new();
    dist[source] = 0.0;
    heap.push(Entry(0.0, source));
    while let Some(Entry(d, u)) = heap.pop() {
        if d > dist[u] {
            continue;
        }
        for &(v, w) in &graph[u] {
            let nd = d + w;
            if nd < dist[v] {
                dist[v] = nd;
                heap.push(Entry(nd, v));
            }
        }
    }
    dist
}

/// Walks the mutual kNN graph over `rows` from the row nearest to the
/// reference and returns the closest (by path length) rows the classifier
/// assigns to the target. Rows that differ from the reference on an
/// immutable coordinate are not accepted as endpoints.
pub fn gen_face(
    req: &GenRequest,
    clf: &SplitClassifier,
    rows: &DMatrix<f64>,
    metric: &Metric,
    immutable: &[bool],
    cfg: &FaceConfig,
) -> Result<GenResult> {
    let n = clf.input_dim();
    req.validate(n)?;
    if rows.ncols() != n || immutable.len() != n {
        return Err(dim_err("training columns", n, rows.ncols()));
    }
    if rows.nrows() < cfg.k + 1 {
        return Err(Error::InvalidData(format!("FACE needs at least {} rows, got {}", cfg.k + 1, rows.nrows())));
    }
    let pts: Vec<DVector<f64>> = rows.row_iter().map(|r| r.transpose()).collect();
    let start = (0..pts.len())
        .min_by(|&a, &b| {
            metric.distance_sq(&pts[a], &req.reference).total_cmp(&metric.distance_sq(&pts[b], &req.reference)).then(a.cmp(&b))
        })
        .expect("rows are non-empty");
    let graph = mutual_knn_graph(rows, metric, cfg.k);
    let dist = dijkstra(&graph, start);
    let mut reached: Vec<(f64, usize)> = (0..pts.len())
        .filter(|&i| dist[i].is_finite())
        .filter(|&i| (0..n).all(|c| !immutable[c] || (pts[i][c] - req.reference[c]).abs() <= 1e-6))
        .filter(|&i| clf.target_probability(&pts[i], req.target) >= req.threshold)
        .map(|i| (dist[i], i))
        .collect();
    if reached.is_empty() {
        return Err(Error::Unreachable);
    }
    reached.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    let points = reached.into_iter().take(req.count).map(|(_, i)| pts[i].clone()).collect();
    Ok(GenResult::judge(points, Some(clf), req, "face".into()))
}
