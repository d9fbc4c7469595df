//! Counterfactual quality metrics, grid-point selection and report aggregation.

use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

use crate::models::SplitClassifier;

pub fn l2(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).norm()
}

pub fn linf(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    (a - b).amax()
}

/// Indices of the `k` rows nearest to `point` (euclidean), ties by lower index.
pub fn nearest_rows(point: &DVector<f64>, rows: &DMatrix<f64>, k: usize) -> Vec<usize> {
    let mut d: Vec<(f64, usize)> = rows
        .row_iter()
        .enumerate()
        .map(|(i, r)| (r.iter().zip(point.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>(), i))
        .collect();
    d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    d.into_iter().take(k).map(|(_, i)| i).collect()
}

/// Fraction of the `k` nearest training rows whose predicted label is `target`.
pub fn ynn(cf: &DVector<f64>, rows: &DMatrix<f64>, predicted: &[usize], target: usize, k: usize) -> f64 {
    let nn = nearest_rows(cf, rows, k);
    if nn.is_empty() {
        return 0.0;
    }
    nn.iter().filter(|&&i| predicted[i] == target).count() as f64 / nn.len() as f64
}

/// Changed coordinates that can individually be reverted to the reference
/// while the classifier still predicts `target`.
pub fn redundancy(cf: &DVector<f64>, reference: &DVector<f64>, clf: &SplitClassifier, target: usize) -> usize {
    let mut count = 0;
    for i in 0..cf.len() {
        if (cf[i] - reference[i]).abs() <= 1e-9 {
            continue;
        }
        let mut reverted = cf.clone();
        reverted[i] = reference[i];
        if clf.predict(&reverted) == target {
            count += 1;
        }
    }
    count
}

/// Mean pairwise euclidean distance; `None` for fewer than two points.
pub fn diversity(cfs: &[DVector<f64>]) -> Option<f64> {
    let k = cfs.len();
    if k < 2 {
        return None;
    }
    let mut total = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            total += l2(&cfs[i], &cfs[j]);
        }
    }
    Some(total / (k * (k - 1) / 2) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridScore {
    pub success: f64,
    pub mean_l2: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridChoice {
    pub index: usize,
    /// False when no grid point met the success requirement.
    pub feasible: bool,
}

/// Lowest mean l2 among points with success ≥ `min_success` (first wins ties);
/// otherwise the highest-success point, flagged infeasible.
pub fn select_grid_point(scores: &[GridScore], min_success: f64) -> Option<GridChoice> {
    let mut best: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if s.success >= min_success && best.is_none_or(|b| s.mean_l2 < scores[b].mean_l2) {
            best = Some(i);
        }
    }
    if let Some(index) = best {
        return Some(GridChoice { index, feasible: true });
    }
    let mut fallback: Option<usize> = None;
    for (i, s) in scores.iter().enumerate() {
        if fallback.is_none_or(|b| s.success > scores[b].success) {
            fallback = Some(i);
        }
    }
    fallback.map(|index| GridChoice { index, feasible: false })
}

/// Metrics of one reference, averaged over its counterfactuals.
#[derive(Debug, Clone, PartialEq)]
pub struct InstanceRecord {
    pub method: String,
    pub task: usize,
    pub l2: f64,
    pub linf: f64,
    pub ynn: f64,
    pub redundancy: f64,
    pub diversity: Option<f64>,
    pub success: f64,
    pub count: usize,
}

/// Training rows with the classifier's predicted labels, for yNN.
#[derive(Debug, Clone, Copy)]
pub struct Neighbourhood<'a> {
    pub rows: &'a DMatrix<f64>,
    pub predicted: &'a [usize],
    pub k: usize,
}

/// Metrics for one reference from its counterfactuals.
#[allow(clippy::too_many_arguments)]
pub fn instance_record(
    method: &str,
    task: usize,
    reference: &DVector<f64>,
    cfs: &[DVector<f64>],
    clf: &SplitClassifier,
    target: usize,
    threshold: f64,
    hood: Neighbourhood,
) -> InstanceRecord {
    let n = cfs.len().max(1) as f64;
    let mean = |f: &dyn Fn(&DVector<f64>) -> f64| cfs.iter().map(f).sum::<f64>() / n;
    InstanceRecord {
        method: method.into(),
        task,
        l2: mean(&|c| l2(c, reference)),
        linf: mean(&|c| linf(c, reference)),
        ynn: mean(&|c| ynn(c, hood.rows, hood.predicted, target, hood.k)),
        redundancy: mean(&|c| redundancy(c, reference, clf, target) as f64),
        diversity: diversity(cfs),
        success: mean(&|c| if clf.target_probability(c, target) >= threshold { 1.0 } else { 0.0 }),
        count: cfs.len(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub method: String,
    pub l2: f64,
    pub linf: f64,
    pub ynn: f64,
    pub redundancy: f64,
    /// Mean over references with at least two counterfactuals.
    pub diversity: Option<f64>,
    pub success: f64,
    pub n: usize,
    pub failures: usize,
}

/// Averages records of one method in task order.
pub fn aggregate(method: &str, records: &[InstanceRecord], failures: usize) -> MetricsReport {
    let mut own: Vec<&InstanceRecord> = records.iter().filter(|r| r.method == method).collect();
    own.sort_by_key(|r| r.task);
    let n = own.len();
    let mean = |f: &dyn Fn(&InstanceRecord) -> f64| {
        if n == 0 {
            f64::NAN
        } else {
            own.iter().map(|r| f(r)).sum::<f64>() / n as f64
        }
    };
    let divs: Vec<f64> = own.iter().filter_map(|r| r.diversity).collect();
    MetricsReport {
        method: method.into(),
        l2: mean(&|r| r.l2),
        linf: mean(&|r| r.linf),
        ynn: mean(&|r| r.ynn),
        redundancy: mean(&|r| r.redundancy),
        diversity: if divs.is_empty() { None } else { Some(divs.iter().sum::<f64>() / divs.len() as f64) },
        success: mean(&|r| r.success),
        n,
        failures,
    }
}
