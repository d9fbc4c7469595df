//! TOML run configuration for `bench` (and shared pieces for `fit`).
//!
//! ```toml
//! seed = 7
//!
//! [data]
//! source = "csv"          # or "anisotropic" / "blobs"
//! path = "data.csv"
//! schema = "schema.toml"
//! label = "y"
//!
//! [model]
//! hidden = [50, 20]
//! activation = "relu"
//!
//! [bench]
//! references = 100
//! target = 1
//!
//! [[methods]]
//! kind = "wachter"
//! gamma = [0.1, 1.0, 10.0]
//! ```
//!
//! Relative paths resolve against the directory holding the config file.

use std::fs;
use std::path::{Path, PathBuf};

use cfprior_core::generators::{FaceConfig, SpheresConfig};
use cfprior_core::{Activation, MetricKind, TrainConfig};
use serde::Deserialize;

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub data: DataConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub bench: BenchConfig,
    #[serde(default)]
    pub methods: Vec<MethodConfig>,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    Csv { path: PathBuf, schema: PathBuf, label: String },
    /// Two classes with covariance `diag(1, 1/16)` and means `∓(1, 0.5)`.
    Anisotropic { per_class: usize },
    /// Two unit-variance blobs at `±(separation/2, 0)`.
    Blobs { per_class: usize, separation: f64 },
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    /// Directory holding a fitted model; skips training when set.
    pub path: Option<PathBuf>,
    /// Diagonal jitter added to the fitted data covariance.
    pub prior_jitter: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self { hidden: vec![50, 20], activation: Activation::Relu, train: TrainConfig::default(), path: None, prior_jitter: 1e-6 }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// References evaluated per method.
    pub references: usize,
    /// Separate references used to score grid points.
    pub held_out: usize,
    /// Class index counterfactuals should reach.
    pub target: usize,
    /// Counterfactuals per reference.
    pub count: usize,
    pub k_ynn: usize,
    pub min_success: f64,
    pub threshold: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self { references: 100, held_out: 30, target: 1, count: 1, k_ynn: 5, min_success: 0.99, threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodKind {
    Wachter,
    Ours,
    Regularized,
    PosteriorSample,
    GrowingSpheres,
    Face,
}

impl MethodKind {
    pub fn label(self) -> &'static str {
        match self {
            MethodKind::Wachter => "wachter",
            MethodKind::Ours => "ours",
            MethodKind::Regularized => "regularized",
            MethodKind::PosteriorSample => "posterior-sample",
            MethodKind::GrowingSpheres => "growing-spheres",
            MethodKind::Face => "face",
        }
    }

    fn uses_alpha(self) -> bool {
        !matches!(self, MethodKind::Wachter | MethodKind::Regularized)
    }

    fn uses_gamma(self) -> bool {
        matches!(self, MethodKind::Wachter | MethodKind::Ours | MethodKind::Regularized)
    }
}

/// One method with its parameter grid; list-valued fields are crossed.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    pub kind: MethodKind,
    /// Report label; defaults to the kind.
    pub name: Option<String>,
    #[serde(default = "one")]
    pub gamma: Vec<f64>,
    #[serde(default = "half")]
    pub alpha: Vec<f64>,
    #[serde(default = "one")]
    pub reg_weight: Vec<f64>,
    #[serde(default)]
    pub lambda_div: f64,
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default = "default_metric")]
    pub metric: MetricKind,
    #[serde(default)]
    pub spheres: SpheresConfig,
    #[serde(default = "default_face_k")]
    pub face_k: Vec<usize>,
    /// Mode-search restarts for the class prior.
    #[serde(default = "default_restarts")]
    pub restarts: usize,
}

fn one() -> Vec<f64> {
    vec![1.0]
}
fn half() -> Vec<f64> {
    vec![0.5]
}
fn default_lr() -> f64 {
    0.05
}
fn default_steps() -> usize {
    1000
}
fn default_metric() -> MetricKind {
    MetricKind::Mahalanobis
}
fn default_face_k() -> Vec<usize> {
    vec![FaceConfig::default().k]
}
fn default_restarts() -> usize {
    8
}

/// One point of a method's grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Params {
    pub gamma: f64,
    pub alpha: f64,
    pub reg_weight: f64,
    pub face_k: usize,
}

impl MethodConfig {
    pub fn new(kind: MethodKind) -> Self {
        Self {
            kind,
            name: None,
            gamma: one(),
            alpha: half(),
            reg_weight: one(),
            lambda_div: 0.0,
            learning_rate: default_lr(),
            steps: default_steps(),
            metric: default_metric(),
            spheres: SpheresConfig::default(),
            face_k: default_face_k(),
            restarts: default_restarts(),
        }
    }

    pub fn label(&self) -> String {
        self.name.clone().unwrap_or_else(|| self.kind.label().into())
    }

    /// Grid points in row-major order over (alpha, gamma, reg_weight, face_k);
    /// fields a kind ignores contribute only their first value.
    pub fn grid(&self) -> Vec<Params> {
        let k = self.kind;
        let take = |v: &[f64], used: bool| if used { v.to_vec() } else { v[..1].to_vec() };
        let alphas = take(&self.alpha, k.uses_alpha());
        let gammas = take(&self.gamma, k.uses_gamma());
        let regs = take(&self.reg_weight, k == MethodKind::Regularized);
        let ks = if k == MethodKind::Face { self.face_k.clone() } else { self.face_k[..1].to_vec() };
        let mut out = Vec::new();
        for &alpha in &alphas {
            for &gamma in &gammas {
                for &reg_weight in &regs {
                    for &face_k in &ks {
                        out.push(Params { gamma, alpha, reg_weight, face_k });
                    }
                }
            }
        }
        out
    }

    fn validate(&self) -> CliResult<()> {
        let label = self.label();
        if self.gamma.is_empty() || self.alpha.is_empty() || self.reg_weight.is_empty() || self.face_k.is_empty() {
            return Err(CliError::InvalidParam(format!("method `{label}` has an empty parameter list")));
        }
        if let Some(a) = self.alpha.iter().find(|a| !(0.0..1.0).contains(*a)) {
            return Err(CliError::InvalidParam(format!("method `{label}`: alpha {a} outside [0, 1)")));
        }
        if let Some(g) = self.gamma.iter().chain(&self.reg_weight).find(|g| !(**g >= 0.0) || !g.is_finite()) {
            return Err(CliError::InvalidParam(format!("method `{label}`: weight {g} must be finite and >= 0")));
        }
        if !(self.learning_rate > 0.0) || self.steps == 0 {
            return Err(CliError::InvalidParam(format!("method `{label}`: learning rate and steps must be positive")));
        }
        Ok(())
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config { path: path.into(), message: e.to_string() })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let DataConfig::Csv { path, schema, .. } = &mut self.data {
            fix(path);
            fix(schema);
        }
        if let Some(p) = &mut self.model.path {
            fix(p);
        }
    }

    /// Checks everything that can be checked before running.
    pub fn validate(&self) -> CliResult<u64> {
        let seed = self.seed.ok_or_else(|| CliError::InvalidParam("a seed is required (config `seed` or --seed)".into()))?;
        match &self.data {
            DataConfig::Csv { path, schema, .. } => {
                for p in [path, schema] {
                    if !p.exists() {
                        return Err(CliError::MissingArtifact(p.clone()));
                    }
                }
            }
            DataConfig::Anisotropic { per_class } | DataConfig::Blobs { per_class, .. } if *per_class < 2 => {
                return Err(CliError::InvalidParam("synthetic data needs at least 2 rows per class".into()));
            }
            _ => {}
        }
        if let Some(p) = &self.model.path {
            if !p.exists() {
                return Err(CliError::MissingArtifact(p.clone()));
            }
        }
        let b = &self.bench;
        if b.count == 0 || b.k_ynn == 0 {
            return Err(CliError::InvalidParam("count and k_ynn must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&b.min_success) || !(0.0..=1.0).contains(&b.threshold) {
            return Err(CliError::InvalidParam("min_success and threshold must lie in [0, 1]".into()));
        }
        let mut labels: Vec<String> = Vec::new();
        for m in &self.methods {
            m.validate()?;
            if labels.contains(&m.label()) {
                return Err(CliError::InvalidParam(format!("duplicate method label `{}`", m.label())));
            }
            labels.push(m.label());
        }
        Ok(seed)
    }
}
