//! Feed-forward softmax classifier split into a representation `r(x)` and a
//! linear head, with hand-written reverse-mode gradients.

use alloc::format;
use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{dim_err, Error, Result};
use crate::optim::{Adam, AdamConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative given the pre-activation `z` and output `a`.
    fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

/// `a = act(W·a_prev + b)`, with `W` of shape `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: DMatrix<f64>,
    pub bias: DVector<f64>,
    pub activation: Activation,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitClassifier {
    pub layers: Vec<Layer>,
    /// `m × h` head feeding the softmax.
    pub head_weight: DMatrix<f64>,
    pub head_bias: DVector<f64>,
}

/// Numerically stable `log Σ exp(z)`.
pub fn log_sum_exp(z: &DVector<f64>) -> f64 {
    let max = z.max();
    if !max.is_finite() {
        return max;
    }
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &DVector<f64>) -> DVector<f64> {
    let lse = log_sum_exp(z);
    z.map(|v| (v - lse).exp())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i] > v[best] {
            best = i;
        }
    }
    best
}

struct Tape {
    /// inputs to each layer followed by the representation
    acts: Vec<DVector<f64>>,
    pre: Vec<DVector<f64>>,
    logits: DVector<f64>,
}

impl SplitClassifier {
    pub fn new(layers: Vec<Layer>, head_weight: DMatrix<f64>, head_bias: DVector<f64>) -> Result<Self> {
        let mut width = None;
        for (i, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.weight.nrows() {
                return Err(dim_err(&format!("layer {i} bias"), layer.weight.nrows(), layer.bias.len()));
            }
            if let Some(w) = width {
                if layer.weight.ncols() != w {
                    return Err(dim_err(&format!("layer {i} input width"), w, layer.weight.ncols()));
                }
            }
            width = Some(layer.weight.nrows());
        }
        if let Some(w) = width {
            if head_weight.ncols() != w {
                return Err(dim_err("head input width", w, head_weight.ncols()));
            }
        }
        if head_bias.len() != head_weight.nrows() {
            return Err(dim_err("head bias", head_weight.nrows(), head_bias.len()));
        }
        if head_weight.nrows() < 2 {
            return Err(Error::InvalidParameter("a classifier needs at least 2 classes".into()));
        }
        Ok(Self { layers, head_weight, head_bias })
    }

    /// Glorot-uniform weights and zero biases drawn from stream `(seed, 0)`.
    pub fn init(input_dim: usize, hidden: &[usize], activation: Activation, classes: usize, seed: u64) -> Result<Self> {
        let mut rng = rng::stream(seed, 0);
        let mut glorot = |rows: usize, cols: usize| {
            let s = (6.0 / (rows + cols) as f64).sqrt();
            let mut m = DMatrix::zeros(rows, cols);
            for i in 0..rows {
                for j in 0..cols {
                    m[(i, j)] = s * (2.0 * rng::uniform(&mut rng) - 1.0);
                }
            }
            m
        };
        let mut layers = Vec::with_capacity(hidden.len());
        let mut width = input_dim;
        for &h in hidden {
            layers.push(Layer { weight: glorot(h, width), bias: DVector::zeros(h), activation });
            width = h;
        }
        let head = glorot(classes, width);
        Self::new(layers, head, DVector::zeros(classes))
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(self.head_weight.ncols(), |l| l.weight.ncols())
    }

    pub fn representation_dim(&self) -> usize {
        self.head_weight.ncols()
    }

    pub fn class_count(&self) -> usize {
        self.head_weight.nrows()
    }

    fn run(&self, x: &DVector<f64>) -> Tape {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut pre = Vec::with_capacity(self.layers.len());
        acts.push(x.clone());
        for layer in &self.layers {
            let z = &layer.weight * acts.last().expect("input pushed") + &layer.bias;
            let act = layer.activation;
            acts.push(z.map(|v| act.apply(v)));
            pre.push(z);
        }
        let logits = &self.head_weight * acts.last().expect("input pushed") + &self.head_bias;
        Tape { acts, pre, logits }
    }

    /// Pre-head activation `r(x)`.
    pub fn representation(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut a = x.clone();
        for layer in &self.layers {
            let act = layer.activation;
            a = (&layer.weight * a + &layer.bias).map(|v| act.apply(v));
        }
        a
    }

    pub fn logits(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.head_weight * self.representation(x) + &self.head_bias
    }

    /// Class probabilities.
    pub fn forward(&self, x: &DVector<f64>) -> DVector<f64> {
        softmax(&self.logits(x))
    }

    pub fn log_probs(&self, x: &DVector<f64>) -> DVector<f64> {
        let z = self.logits(x);
        let lse = log_sum_exp(&z);
        z.map(|v| v - lse)
    }

    pub fn predict(&self, x: &DVector<f64>) -> usize {
        argmax(&self.logits(x))
    }

    /// `p(target | x)`.
    pub fn target_probability(&self, x: &DVector<f64>, target: usize) -> f64 {
        self.log_probs(x)[target].exp()
    }

    /// `−log p(target | x)` and its gradient with respect to `x`.
    pub fn nll_input(&self, x: &DVector<f64>, target: usize) -> (f64, DVector<f64>) {
        let tape = self.run(x);
        let (value, dlogits) = nll_logits(&tape.logits, target);
        let dx = self.backward(&tape, &dlogits, None);
        (value, dx)
    }

    /// Gradient of `−log p(target | x)` with respect to `x`.
    pub fn grad_input(&self, x: &DVector<f64>, target: usize) -> DVector<f64> {
        self.nll_input(x, target).1
    }

    /// `∂logits/∂x` as an `m × n` matrix.
    pub fn logit_jacobian(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let tape = self.run(x);
        let m = self.class_count();
        let mut jac = DMatrix::zeros(m, x.len());
        for c in 0..m {
            let mut e = DVector::zeros(m);
            e[c] = 1.0;
            jac.row_mut(c).copy_from(&self.backward(&tape, &e, None).transpose());
        }
        jac
    }

    /// Back-propagates `dlogits`, accumulating parameter gradients into
    /// `param_grad` (flat layout of [`Self::params`]) when given.
    fn backward(&self, tape: &Tape, dlogits: &DVector<f64>, mut param_grad: Option<&mut [f64]>) -> DVector<f64> {
        let r = tape.acts.last().expect("input pushed");
        let mut offset = self.param_count();
        if let Some(g) = param_grad.as_deref_mut() {
            let (hr, hc) = self.head_weight.shape();
            offset -= hr * hc + hr;
            for j in 0..hc {
                for i in 0..hr {
                    g[offset + j * hr + i] += dlogits[i] * r[j];
                }
            }
            for i in 0..hr {
                g[offset + hr * hc + i] += dlogits[i];
            }
        }
        let mut da = self.head_weight.tr_mul(dlogits);
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let z = &tape.pre[l];
            let a = &tape.acts[l + 1];
            let act = layer.activation;
            let dz = DVector::from_fn(z.len(), |i, _| da[i] * act.derivative(z[i], a[i]));
            if let Some(g) = param_grad.as_deref_mut() {
                let (wr, wc) = layer.weight.shape();
                offset -= wr * wc + wr;
                let input = &tape.acts[l];
                for j in 0..wc {
                    for i in 0..wr {
                        g[offset + j * wr + i] += dz[i] * input[j];
                    }
                }
                for i in 0..wr {
                    g[offset + wr * wc + i] += dz[i];
                }
            }
            da = layer.weight.tr_mul(&dz);
        }
        da
    }

    pub fn param_count(&self) -> usize {
        let layers: usize = self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum();
        layers + self.head_weight.len() + self.head_bias.len()
    }

    /// Flat parameters: each layer's weight (column-major) then bias, then the head.
    pub fn params(&self) -> DVector<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(layer.bias.as_slice());
        }
        out.extend_from_slice(self.head_weight.as_slice());
        out.extend_from_slice(self.head_bias.as_slice());
        DVector::from_vec(out)
    }

    pub fn set_params(&mut self, p: &DVector<f64>) -> Result<()> {
        if p.len() != self.param_count() {
            return Err(dim_err("parameter vector", self.param_count(), p.len()));
        }
        let mut at = 0;
        let mut take = |dst: &mut [f64]| {
            dst.copy_from_slice(&p.as_slice()[at..at + dst.len()]);
            at += dst.len();
        };
        for layer in &mut self.layers {
            take(layer.weight.as_mut_slice());
            take(layer.bias.as_mut_slice());
        }
        take(self.head_weight.as_mut_slice());
        take(self.head_bias.as_mut_slice());
        Ok(())
    }

    /// Mean NLL over `rows` and its gradient with respect to [`Self::params`].
    ///
    /// Rows are reduced pairwise, so a dataset stacked on itself yields
    /// bit-identical results.
    pub fn loss_and_param_grad(&self, rows: &DMatrix<f64>, labels: &[usize]) -> (f64, DVector<f64>) {
        let idx: Vec<usize> = (0..rows.nrows()).collect();
        self.batch_loss(rows, labels, &idx)
    }

    fn batch_loss(&self, rows: &DMatrix<f64>, labels: &[usize], idx: &[usize]) -> (f64, DVector<f64>) {
        let (value, mut grad) = self.pairwise_sum(rows, labels, idx);
        let m = idx.len().max(1) as f64;
        grad /= m;
        (value / m, grad)
    }

    fn pairwise_sum(&self, rows: &DMatrix<f64>, labels: &[usize], idx: &[usize]) -> (f64, DVector<f64>) {
        if idx.len() <= 1 {
            let mut grad = DVector::zeros(self.param_count());
            let Some(&i) = idx.first() else {
                return (0.0, grad);
            };
            let tape = self.run(&rows.row(i).transpose());
            let (value, dlogits) = nll_logits(&tape.logits, labels[i]);
            self.backward(&tape, &dlogits, Some(grad.as_mut_slice()));
            return (value, grad);
        }
        let mid = idx.len() / 2;
        let (va, ga) = self.pairwise_sum(rows, labels, &idx[..mid]);
        let (vb, gb) = self.pairwise_sum(rows, labels, &idx[mid..]);
        (va + vb, ga + gb)
    }

    pub fn accuracy(&self, rows: &DMatrix<f64>, labels: &[usize]) -> f64 {
        let hits = (0..rows.nrows()).filter(|&i| self.predict(&rows.row(i).transpose()) == labels[i]).count();
        hits as f64 / rows.nrows().max(1) as f64
    }
}

/// `(−log softmax(z)[t], ∂/∂z)`.
fn nll_logits(z: &DVector<f64>, target: usize) -> (f64, DVector<f64>) {
    let lse = log_sum_exp(z);
    let mut d = z.map(|v| (v - lse).exp());
    d[target] -= 1.0;
    (lse - z[target], d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub steps: usize,
    /// `None` trains full-batch.
    pub batch_size: Option<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, steps: 1000, batch_size: None, seed: 0 }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: SplitClassifier,
    /// Mean batch NLL before each update.
    pub trace: Vec<f64>,
}

/// Trains all parameters with Adam on the mean NLL.
pub fn train(clf: &SplitClassifier, rows: &DMatrix<f64>, labels: &[usize], cfg: &TrainConfig) -> Result<TrainOutcome> {
    if rows.nrows() != labels.len() {
        return Err(dim_err("labels", rows.nrows(), labels.len()));
    }
    if rows.ncols() != clf.input_dim() {
        return Err(dim_err("feature columns", clf.input_dim(), rows.ncols()));
    }
    if rows.nrows() == 0 {
        return Err(Error::InvalidData("cannot train on an empty dataset".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= clf.class_count()) {
        return Err(Error::InvalidData(format!("label {bad} exceeds class count {}", clf.class_count())));
    }
    if !(cfg.learning_rate > 0.0) || cfg.batch_size == Some(0) {
        return Err(Error::InvalidParameter("learning rate and batch size must be positive".into()));
    }
    let mut model = clf.clone();
    let mut params = model.params();
    let mut adam = Adam::new(AdamConfig::new(cfg.learning_rate, cfg.steps), params.len());
    let mut trace = Vec::with_capacity(cfg.steps);
    let mut rng = rng::stream(cfg.seed, 1);
    let m = rows.nrows();
    let mut order: Vec<usize> = (0..m).collect();
    let mut cursor = m;
    for step in 0..cfg.steps {
        let (value, grad) = match cfg.batch_size {
            Some(b) if b < m => {
                if cursor + b > m {
                    shuffle(&mut order, &mut rng);
                    cursor = 0;
                }
                let batch = &order[cursor..cursor + b];
                cursor += b;
                model.batch_loss(rows, labels, batch)
            }
            _ => model.loss_and_param_grad(rows, labels),
        };
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, trace });
        }
        trace.push(value);
        adam.step(&mut params, &grad);
        model.set_params(&params)?;
    }
    Ok(TrainOutcome { model, trace })
}

fn shuffle(v: &mut [usize], rng: &mut rng::Stream) {
    for i in (1..v.len()).rev() {
        let j = ((rng::uniform(rng) * (i + 1) as f64) as usize).min(i);
        v.swap(i, j);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::{dmatrix, dvector};

    fn tiny() -> SplitClassifier {
        SplitClassifier::init(3, &[4, 3], Activation::Tanh, 3, 7).unwrap()
    }

    #[test]
    fn zero_weights_are_uniform() {
        let mut clf = tiny();
        clf.set_params(&DVector::zeros(clf.param_count())).unwrap();
        let p = clf.forward(&dvector![1.0, -2.0, 0.5]);
        assert!(p.iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn identity_network_at_origin() {
        let layer = Layer { weight: DMatrix::identity(2, 2), bias: DVector::zeros(2), activation: Activation::Identity };
        let clf = SplitClassifier::new(vec![layer], DMatrix::identity(2, 2), DVector::zeros(2)).unwrap();
        assert_eq!(clf.forward(&dvector![0.0, 0.0]), dvector![0.5, 0.5]);
    }

    #[test]
    fn softmax_is_normalized_for_large_logits() {
        let z = dvector![500.0, -500.0, 499.0, 0.0];
        let p = softmax(&z);
        assert!((p.sum() - 1.0).abs() < 1e-9);
        assert!(p.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn params_roundtrip() {
        let clf = tiny();
        let mut other = SplitClassifier::init(3, &[4, 3], Activation::Tanh, 3, 99).unwrap();
        other.set_params(&clf.params()).unwrap();
        assert_eq!(other, clf);
    }

    #[test]
    fn saturated_argmax_has_vanishing_gradient() {
        let clf = SplitClassifier::new(vec![], dmatrix![100.0, 0.0; -100.0, 0.0], DVector::zeros(2)).unwrap();
        let g = clf.grad_input(&dvector![5.0, 1.0], 0);
        assert!(g.norm() <= 1e-6);
    }

    #[test]
    fn boundary_gradient_follows_weight_difference() {
        let head = dmatrix![1.0, 2.0; -1.0, -2.0];
        let clf = SplitClassifier::new(vec![], head.clone(), DVector::zeros(2)).unwrap();
        let g = clf.grad_input(&dvector![0.0, 0.0], 1);
        let diff = (head.row(0) - head.row(1)).transpose();
        // −∇ log p(1) points from class 1 towards class 0
        let cos = g.dot(&diff) / (g.norm() * diff.norm());
        assert!((cos - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_steps_leave_parameters() {
        let clf = tiny();
        let rows = dmatrix![0.0, 1.0, 2.0; 1.0, 0.0, -1.0];
        let out = train(&clf, &rows, &[0, 2], &TrainConfig { steps: 0, ..TrainConfig::default() }).unwrap();
        assert_eq!(out.model, clf);
        assert!(out.trace.is_empty());
    }

    #[test]
    fn bad_labels_rejected() {
        let rows = dmatrix![0.0, 1.0, 2.0];
        assert!(train(&tiny(), &rows, &[3], &TrainConfig::default()).is_err());
    }
}
