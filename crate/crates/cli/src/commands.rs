//! The four subcommands as library functions.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use cfprior_core::actionability::fit_policy_conditional;
use cfprior_core::generators::{
    gen_face, gen_growing_spheres, gen_optimize, gen_posterior_sample, Actionability, FaceConfig, OptimizeConfig,
    PosteriorSource,
};
use cfprior_core::{
    laplace_class_prior, AdamConfig, DataPrior, FeatureKind, GenRequest, GenResult, JointCfPrior, LaplaceConfig, Metric,
    ObjectiveConfig, RawValue, Variant,
};

use crate::artifacts::Fitted;
use crate::bench::{run_benchmark, train_classifier, write_reports, BenchOutput};
use crate::config::{MethodConfig, MethodKind, ModelConfig, RunConfig};
use crate::data::{format_cell, format_number, load_dataset, parse_cell, Table};
use crate::density::{density_grid, grid_csv, DensitySpec};
use crate::error::{CliError, CliResult};

pub struct FitArgs<'a> {
    pub data: &'a Path,
    pub schema: &'a Path,
    pub label: &'a str,
    pub model: ModelConfig,
    pub seed: u64,
    pub out: &'a Path,
}

/// Fits schema proportions and the data prior, trains the classifier and
/// writes the artifacts. Returns the training accuracy.
pub fn cmd_fit(args: &FitArgs) -> CliResult<f64> {
    let d = load_dataset(args.data, args.schema, args.label)?;
    let prior = match d.scm_prior {
        Some(p) => p,
        None => d.schema.adjust_prior(&DataPrior::fit(&d.latent, args.model.prior_jitter)?)?,
    };
    let m = &args.model;
    let model = train_classifier(&d.latent, &d.labels, d.classes.len(), &m.hidden, m.activation, m.train, args.seed)?;
    let accuracy = model.accuracy(&d.latent, &d.labels);
    Fitted { model, classes: d.classes, prior, schema: d.schema }.save(args.out)?;
    Ok(accuracy)
}

/// Where the reference row comes from.
pub enum ReferenceSpec<'a> {
    /// Row index into the dataset file.
    Index(usize),
    /// Raw cells in schema feature order.
    Cells(&'a str),
}

pub struct GenerateArgs<'a> {
    pub artifacts: &'a Path,
    /// Training data; needed for `face`, `posterior-sample` and `--index`.
    pub data: Option<&'a Path>,
    pub reference: ReferenceSpec<'a>,
    pub target: &'a str,
    pub method: MethodKind,
    pub alpha: f64,
    pub gamma: f64,
    pub count: usize,
    pub seed: u64,
    pub out: &'a Path,
}

fn resolve_target(classes: &[String], target: &str) -> CliResult<usize> {
    if let Some(i) = classes.iter().position(|c| c == target) {
        return Ok(i);
    }
    Err(CliError::InvalidParam(format!("target `{target}` is not one of the model classes {classes:?}")))
}

/// Generates counterfactuals for one reference and writes them decoded to
/// raw features (`counterfactuals.csv`) with a per-feature change listing
/// (`changes.csv`).
pub fn cmd_generate(args: &GenerateArgs) -> CliResult<GenResult> {
    let fitted = Fitted::load(args.artifacts)?;
    let schema = &fitted.schema;
    let table = args.data.map(Table::read).transpose()?;
    let raw_reference: Vec<RawValue> = match args.reference {
        ReferenceSpec::Index(i) => {
            let t = table.as_ref().ok_or_else(|| CliError::InvalidParam("--index needs --data".into()))?;
            let rows = t.raw_rows(&schema.features)?;
            rows.get(i)
                .cloned()
                .ok_or_else(|| CliError::InvalidParam(format!("row index {i} out of range ({} rows)", rows.len())))?
        }
        ReferenceSpec::Cells(text) => {
            let cells: Vec<&str> = text.split(',').map(str::trim).collect();
            if cells.len() != schema.features.len() {
                return Err(CliError::SchemaMismatch(format!(
                    "reference has {} values, schema lists {} features",
                    cells.len(),
                    schema.features.len()
                )));
            }
            schema
                .features
                .iter()
                .zip(cells)
                .map(|(f, c)| parse_cell(f, c).map_err(CliError::SchemaMismatch))
                .collect::<CliResult<_>>()?
        }
    };
    let reference = schema.encode_row(&raw_reference)?;
    let target = resolve_target(&fitted.classes, args.target)?;
    let policy = schema.latent_policy()?;
    let immutable = policy.immutable_mask();
    let mut req = GenRequest::new(reference.clone(), target, args.count, args.seed);
    req.threshold = 0.5;
    let clf = &fitted.model;
    let prior = &fitted.prior;
    let training = || -> CliResult<nalgebra::DMatrix<f64>> {
        let t = table.as_ref().ok_or_else(|| {
            CliError::InvalidParam(format!("method {} needs the training data (--data)", args.method.label()))
        })?;
        Ok(schema.encode_rows(&t.raw_rows(&schema.features)?)?)
    };
    let defaults = MethodConfig::new(args.method);
    let optimize = |variant| {
        let objective = ObjectiveConfig { variant, gamma: args.gamma, alpha: args.alpha, ..ObjectiveConfig::default() };
        let cfg = OptimizeConfig {
            objective,
            adam: AdamConfig::new(defaults.learning_rate, defaults.steps),
            ..OptimizeConfig::default()
        };
        gen_optimize(&req, clf, Some(prior), &immutable, &cfg)
    };
    let result = match args.method {
        MethodKind::Wachter => optimize(Variant::Wachter)?,
        MethodKind::Ours => optimize(Variant::Ours)?,
        MethodKind::Regularized => optimize(Variant::Regularized)?,
        MethodKind::PosteriorSample => {
            let rows = training()?;
            let lc = LaplaceConfig { seed: args.seed, ..LaplaceConfig::default() };
            let class_prior = laplace_class_prior(clf, &rows, prior, target, &lc)?;
            let joint = JointCfPrior::build(prior.clone(), args.alpha, &immutable)?;
            let conditional =
                if policy.has_nonactionable() { Some(fit_policy_conditional(&rows, &policy, 1e-6)?) } else { None };
            let act = conditional.as_ref().map(|conditional| Actionability { policy: &policy, conditional });
            gen_posterior_sample(&req, PosteriorSource::Laplace { class_prior: &class_prior, joint: &joint }, act, Some(clf))?
        }
        MethodKind::GrowingSpheres => {
            let metric = Metric::from_kind(defaults.metric, prior, args.alpha)?;
            gen_growing_spheres(&req, clf, &metric, &immutable, &defaults.spheres)?
        }
        MethodKind::Face => {
            let rows = training()?;
            let metric = Metric::from_kind(defaults.metric, prior, args.alpha)?;
            gen_face(&req, clf, &rows, &metric, &immutable, &FaceConfig::default())?
        }
    };
    write_generated(args.out, &fitted, &raw_reference, &result)?;
    Ok(result)
}

fn write_generated(out: &Path, fitted: &Fitted, reference: &[RawValue], result: &GenResult) -> CliResult<()> {
    let schema = &fitted.schema;
    let mut cfs = String::from("cf,target_probability,valid");
    for f in &schema.features {
        cfs.push(',');
        cfs.push_str(&f.name);
    }
    cfs.push('\n');
    let mut changes = String::from("cf,feature,reference,counterfactual,delta\n");
    for (k, c) in result.counterfactuals.iter().enumerate() {
        let mut decoded = schema.decode_row(&c.point)?;
        for (j, f) in schema.features.iter().enumerate() {
            if f.immutable {
                decoded[j] = reference[j];
            }
        }
        let p = c.target_probability.map(format_number).unwrap_or_default();
        let _ = write!(cfs, "{k},{p},{}", c.valid);
        for (f, &v) in schema.features.iter().zip(&decoded) {
            let _ = write!(cfs, ",{}", format_cell(f, v));
        }
        cfs.push('\n');
        for ((f, &r), &v) in schema.features.iter().zip(reference).zip(&decoded) {
            let delta = match (&f.kind, r, v) {
                (FeatureKind::Categorical { .. }, RawValue::Category(a), RawValue::Category(b)) => {
                    if a == b { "0" } else { "1" }.to_string()
                }
                (_, RawValue::Number(a), RawValue::Number(b)) => format_number(b - a),
                _ => String::new(),
            };
            let _ = writeln!(changes, "{k},{},{},{},{delta}", f.name, format_cell(f, r), format_cell(f, v));
        }
    }
    fs::create_dir_all(out).map_err(|e| CliError::io(out, e))?;
    for (name, text) in [("counterfactuals.csv", cfs), ("changes.csv", changes)] {
        let path = out.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}

/// Flag overrides applied on top of a loaded bench config.
#[derive(Debug, Clone, Default)]
pub struct BenchOverrides {
    pub seed: Option<u64>,
    pub methods: Vec<String>,
    pub alpha: Option<f64>,
    pub gamma: Option<f64>,
    pub target: Option<usize>,
    pub count: Option<usize>,
    pub k_ynn: Option<usize>,
}

impl BenchOverrides {
    pub fn apply(&self, cfg: &mut RunConfig) -> CliResult<()> {
        if let Some(s) = self.seed {
            cfg.seed = Some(s);
        }
        if !self.methods.is_empty() {
            for name in &self.methods {
                if !cfg.methods.iter().any(|m| &m.label() == name) {
                    return Err(CliError::InvalidParam(format!("no configured method is labelled `{name}`")));
                }
            }
            cfg.methods.retain(|m| self.methods.contains(&m.label()));
        }
        for m in &mut cfg.methods {
            if let Some(a) = self.alpha {
                m.alpha = vec![a];
            }
            if let Some(g) = self.gamma {
                m.gamma = vec![g];
            }
        }
        if let Some(t) = self.target {
            cfg.bench.target = t;
        }
        if let Some(c) = self.count {
            cfg.bench.count = c;
        }
        if let Some(k) = self.k_ynn {
            cfg.bench.k_ynn = k;
        }
        Ok(())
    }
}

pub fn cmd_bench(config: &Path, overrides: &BenchOverrides, threads: Option<usize>, out: &Path) -> CliResult<BenchOutput> {
    let mut cfg = RunConfig::load(config)?;
    overrides.apply(&mut cfg)?;
    let result = run_benchmark(&cfg, threads)?;
    write_reports(&result, out)?;
    Ok(result)
}

/// Writes the density grid to `out` and returns the grid cell with the
/// highest density.
pub fn cmd_density_grid(spec: &Path, resolution: Option<usize>, out: &PathBuf) -> CliResult<(f64, f64, f64)> {
    let spec = DensitySpec::load(spec)?;
    let g = spec.distribution()?;
    let points = density_grid(&g, spec.bounds, resolution.unwrap_or(spec.resolution))?;
    if let Some(dir) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    fs::write(out, grid_csv(&points)).map_err(|e| CliError::io(out, e))?;
    let best = points.iter().copied().fold((f64::NAN, f64::NAN, f64::NEG_INFINITY), |b, p| if p.2 > b.2 { p } else { b });
    Ok(best)
}
