//! Adam with best-iterate tracking.

use alloc::vec::Vec;

use nalgebra::DVector;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 0.05, steps: 1000, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

impl AdamConfig {
    pub fn new(lr: f64, steps: usize) -> Self {
        Self { lr, steps, ..Self::default() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamOutcome {
    /// Lowest-loss iterate visited, including the starting point.
    pub solution: DVector<f64>,
    pub value: f64,
    /// Loss at every evaluated iterate, starting with the initial point.
    pub trace: Vec<f64>,
}

/// Adam state over a flat parameter vector, for callers that drive the loop.
#[derive(Debug, Clone)]
pub struct Adam {
    cfg: AdamConfig,
    m: DVector<f64>,
    v: DVector<f64>,
    t: i32,
}

impl Adam {
    pub fn new(cfg: AdamConfig, dim: usize) -> Self {
        Self { cfg, m: DVector::zeros(dim), v: DVector::zeros(dim), t: 0 }
    }

    pub fn step(&mut self, params: &mut DVector<f64>, grad: &DVector<f64>) {
        let AdamConfig { lr, beta1, beta2, eps, .. } = self.cfg;
        self.t += 1;
        let c1 = 1.0 - beta1.powi(self.t);
        let c2 = 1.0 - beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = beta1 * self.m[i] + (1.0 - beta1) * grad[i];
            self.v[i] = beta2 * self.v[i] + (1.0 - beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}

/// Minimizes `loss` from `init` and returns the best iterate seen.
///
/// A non-finite loss or gradient aborts with [`Error::Diverged`] carrying the
/// partial trace.
pub fn adam_minimize<F>(mut loss: F, init: &DVector<f64>, cfg: &AdamConfig) -> Result<AdamOutcome>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let mut x = init.clone();
    let mut adam = Adam::new(*cfg, x.len());
    let mut trace = Vec::with_capacity(cfg.steps + 1);
    let mut best = x.clone();
    let mut best_value = f64::INFINITY;
    for step in 0..=cfg.steps {
        let (value, grad) = loss(&x);
        if !value.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged { step, trace });
        }
        trace.push(value);
        if value < best_value {
            best_value = value;
            best.copy_from(&x);
        }
        if step < cfg.steps {
            adam.step(&mut x, &grad);
        }
    }
    Ok(AdamOutcome { solution: best, value: best_value, trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use nalgebra::dvector;

    #[test]
    fn convex_quadratic() {
        let c = dvector![1.5, -2.0, 0.25];
        let out = adam_minimize(
            |z| {
                let d = z - &c;
                (0.5 * d.norm_squared(), d)
            },
            &DVector::zeros(3),
            &AdamConfig::default(),
        )
        .unwrap();
        assert!((out.solution - c).amax() < 1e-4);
    }

    #[test]
    fn rosenbrock() {
        let f = |z: &DVector<f64>| {
            let (x, y) = (z[0], z[1]);
            let value = (1.0 - x).powi(2) + 100.0 * (y - x * x).powi(2);
            let grad = dvector![-2.0 * (1.0 - x) - 400.0 * x * (y - x * x), 200.0 * (y - x * x)];
            (value, grad)
        };
        let out = adam_minimize(f, &dvector![-1.2, 1.0], &AdamConfig::new(0.01, 5000)).unwrap();
        assert!(out.value <= 1e-3, "value {}", out.value);
    }

    #[test]
    fn zero_gradient_returns_init() {
        let init = dvector![3.0, 4.0];
        let out = adam_minimize(|_| (1.0, DVector::zeros(2)), &init, &AdamConfig::default()).unwrap();
        assert_eq!(out.solution, init);
    }

    #[test]
    fn non_finite_loss_aborts_with_trace() {
        let mut calls = 0;
        let err = adam_minimize(
            |z| {
                calls += 1;
                let v = if calls > 3 { f64::NAN } else { z[0] };
                (v, dvector![1.0])
            },
            &dvector![0.0],
            &AdamConfig::default(),
        )
        .unwrap_err();
        match err {
            Error::Diverged { step, trace } => {
                assert_eq!(step, 3);
                assert_eq!(trace.len(), 3);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn best_iterate_not_last() {
        // overshooting steps on |z|: best value is at the start
        let out = adam_minimize(|z| (z[0].abs(), dvector![z[0].signum()]), &dvector![0.01], &AdamConfig::new(1.0, 5))
            .unwrap();
        assert_eq!(out.solution[0], 0.01);
    }
}
