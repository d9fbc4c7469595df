//! Linear-Gaussian structural causal models and the joint prior they entail.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::prior::{DataPrior, PriorSource};

/// `node := intercept + Σ weight·parent + N(0, noise_variance)`.
///
/// A root node is simply `N(intercept, noise_variance)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScmNode {
    pub name: String,
    #[serde(default)]
    pub parents: Vec<(String, f64)>,
    #[serde(default)]
    pub intercept: f64,
    pub noise_variance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearScm {
    nodes: Vec<ScmNode>,
    /// parent indices and weights per node
    edges: Vec<Vec<(usize, f64)>>,
    order: Vec<usize>,
}

impl LinearScm {
    pub fn new(nodes: Vec<ScmNode>) -> Result<Self> {
        let mut index = BTreeMap::new();
        for (i, node) in nodes.iter().enumerate() {
            if index.insert(node.name.clone(), i).is_some() {
                return Err(Error::InvalidParameter(format!("duplicate SCM node `{}`", node.name)));
            }
            if !(node.noise_variance >= 0.0) || !node.noise_variance.is_finite() {
                return Err(Error::InvalidParameter(format!(
                    "node `{}` has invalid noise variance {}",
                    node.name, node.noise_variance
                )));
            }
        }
        let mut edges = Vec::with_capacity(nodes.len());
        for node in &nodes {
            let mut parents = Vec::new();
            for (parent, weight) in &node.parents {
                let &p = index.get(parent).ok_or_else(|| {
                    Error::InvalidParameter(format!("node `{}` references unknown parent `{parent}`", node.name))
                })?;
                parents.push((p, *weight));
            }
            edges.push(parents);
        }
        let order = topological_order(&nodes, &edges)?;
        Ok(Self { nodes, edges, order })
    }

    pub fn nodes(&self) -> &[ScmNode] {
        &self.nodes
    }

    pub fn names(&self) -> Vec<String> {
        self.nodes.iter().map(|n| n.name.clone()).collect()
    }

    pub fn topological_order(&self) -> &[usize] {
        &self.order
    }

    /// Joint Gaussian entailed by the SCM, in declaration order.
    ///
    /// Nodes are visited in topological order; each child appends
    /// `mean = wᵀμ_parents + b` and covariance row `wᵀΣ_parents,·`.
    pub fn to_gaussian(&self) -> Result<DataPrior> {
        let n = self.nodes.len();
        let mut mu = DVector::zeros(n);
        let mut sigma = DMatrix::zeros(n, n);
        let mut placed: Vec<usize> = Vec::with_capacity(n);
        for &c in &self.order {
            let node = &self.nodes[c];
            let parents = &self.edges[c];
            mu[c] = node.intercept + parents.iter().map(|&(p, w)| w * mu[p]).sum::<f64>();
            for &k in &placed {
                let cov = parents.iter().map(|&(p, w)| w * sigma[(p, k)]).sum::<f64>();
                sigma[(c, k)] = cov;
                sigma[(k, c)] = cov;
            }
            let mut var = node.noise_variance;
            for &(p, wp) in parents {
                for &(q, wq) in parents {
                    var += wp * wq * sigma[(p, q)];
                }
            }
            sigma[(c, c)] = var;
            placed.push(c);
        }
        DataPrior::new(mu, linalg::symmetrize(&sigma), PriorSource::ScmDerived)
    }
}

/// Kahn's algorithm, taking ready nodes in declaration order.
fn topological_order(nodes: &[ScmNode], edges: &[Vec<(usize, f64)>]) -> Result<Vec<usize>> {
    let n = nodes.len();
    let mut indegree: Vec<usize> = edges.iter().map(|p| p.len()).collect();
    let mut children = alloc::vec![Vec::new(); n];
    for (c, parents) in edges.iter().enumerate() {
        for &(p, _) in parents {
            children[p].push(c);
        }
    }
    let mut order = Vec::with_capacity(n);
    let mut done = alloc::vec![false; n];
    while order.len() < n {
        let Some(next) = (0..n).find(|&i| !done[i] && indegree[i] == 0) else {
            let stuck = (0..n).find(|&i| !done[i]).expect("unfinished node");
            return Err(Error::CyclicGraph(nodes[stuck].name.clone()));
        };
        done[next] = true;
        order.push(next);
        for &c in &children[next] {
            indegree[c] -= 1;
        }
    }
    Ok(order)
}
