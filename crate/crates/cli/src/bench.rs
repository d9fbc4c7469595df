//! End-to-end benchmark: data, model, prior, per-method grid search and
//! metric reports.
//!
//! Every reference is an independent task seeded from `(seed, method, row)`,
//! and results are gathered in task order, so reports do not depend on the
//! number of worker threads.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::time::Instant;

use cfprior_core::actionability::fit_policy_conditional;
use cfprior_core::generators::{
    gen_face, gen_growing_spheres, gen_optimize, gen_posterior_sample, Actionability, FaceConfig, OptimizeConfig,
    PosteriorSource,
};
use cfprior_core::metrics::{aggregate, instance_record, select_grid_point, GridChoice, GridScore, InstanceRecord, MetricsReport, Neighbourhood};
use cfprior_core::{
    datasets, laplace_class_prior, models, AdamConfig, DataPrior, FeaturePolicy, FeatureSchema, GenRequest, GenResult,
    JointCfPrior, LaplaceClassPrior, LaplaceConfig, LinearConditional, Metric, ObjectiveConfig, SplitClassifier,
    TrainConfig, Variant,
};
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;

use crate::artifacts::{load_json, ModelFile, MODEL_FILE};
use crate::config::{BenchConfig, DataConfig, MethodConfig, MethodKind, Params, RunConfig};
use crate::data::{format_number, load_dataset};
use crate::error::{CliError, CliResult};

/// Dataset, classifier and prior shared by all methods.
#[derive(Debug, Clone)]
pub struct Setup {
    pub rows: DMatrix<f64>,
    pub labels: Vec<usize>,
    pub classes: Vec<String>,
    pub schema: Option<FeatureSchema>,
    pub clf: SplitClassifier,
    pub prior: DataPrior,
    pub policy: FeaturePolicy,
    pub conditional: Option<LinearConditional>,
    pub predicted: Vec<usize>,
}

fn synthetic_classes() -> Vec<String> {
    vec!["0".into(), "1".into()]
}

/// Loads or generates the data, fits the prior and trains (or loads) the model.
pub fn prepare(cfg: &RunConfig, seed: u64) -> CliResult<Setup> {
    let jitter = cfg.model.prior_jitter;
    let (rows, labels, classes, schema, scm_prior) = match &cfg.data {
        DataConfig::Csv { path, schema, label } => {
            let d = load_dataset(path, schema, label)?;
            (d.latent, d.labels, d.classes, Some(d.schema), d.scm_prior)
        }
        DataConfig::Anisotropic { per_class } => {
            let d = datasets::anisotropic_two_class([*per_class, *per_class], seed);
            (d.rows, d.labels, synthetic_classes(), None, None)
        }
        DataConfig::Blobs { per_class, separation } => {
            let d = datasets::two_blobs(*per_class, *separation, seed);
            (d.rows, d.labels, synthetic_classes(), None, None)
        }
    };
    let prior = match (scm_prior, &schema) {
        (Some(p), _) => p,
        (None, Some(s)) => s.adjust_prior(&DataPrior::fit(&rows, jitter)?)?,
        (None, None) => DataPrior::fit(&rows, jitter)?,
    };
    let policy = match &schema {
        Some(s) => s.latent_policy()?,
        None => FeaturePolicy::all_mutable(rows.ncols()),
    };
    let conditional = if policy.has_nonactionable() { Some(fit_policy_conditional(&rows, &policy, jitter)?) } else { None };
    let clf = match &cfg.model.path {
        Some(dir) => {
            let file: ModelFile = load_json(&dir.join(MODEL_FILE))?;
            if file.classes != classes {
                return Err(CliError::SchemaMismatch(format!(
                    "saved model classes {:?} differ from dataset classes {classes:?}",
                    file.classes
                )));
            }
            file.classifier()?
        }
        None => train_classifier(&rows, &labels, classes.len(), &cfg.model.hidden, cfg.model.activation, cfg.model.train, seed)?,
    };
    if clf.input_dim() != rows.ncols() {
        return Err(CliError::SchemaMismatch(format!(
            "model expects {} latent columns, dataset has {}",
            clf.input_dim(),
            rows.ncols()
        )));
    }
    let predicted = rows.row_iter().map(|r| clf.predict(&r.transpose())).collect();
    Ok(Setup { rows, labels, classes, schema, clf, prior, policy, conditional, predicted })
}

/// Initializes with `seed` and trains with the config's own seed offset by `seed`.
pub fn train_classifier(
    rows: &DMatrix<f64>,
    labels: &[usize],
    classes: usize,
    hidden: &[usize],
    activation: cfprior_core::Activation,
    train: TrainConfig,
    seed: u64,
) -> CliResult<SplitClassifier> {
    let init = SplitClassifier::init(rows.ncols(), hidden, activation, classes, seed)?;
    let cfg = TrainConfig { seed: train.seed.wrapping_add(seed), ..train };
    Ok(models::train(&init, rows, labels, &cfg)?.model)
}

fn derive_seed(seed: u64, stream: u64) -> u64 {
    cfprior_core::rng::stream(seed, stream).random()
}

/// Result of one method: grid scores, the chosen point and evaluation records.
#[derive(Debug, Clone)]
pub struct MethodOutcome {
    pub label: String,
    pub kind: MethodKind,
    pub grid: Vec<(Params, GridScore)>,
    pub choice: GridChoice,
    pub chosen: Params,
    pub records: Vec<InstanceRecord>,
    /// `(task, row, message)` for references that produced no result.
    pub failures: Vec<(usize, usize, String)>,
    pub report: MetricsReport,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOutput {
    pub seed: u64,
    /// Dataset rows used as references, in task order.
    pub references: Vec<usize>,
    pub held_out: Vec<usize>,
    pub methods: Vec<MethodOutcome>,
    pub notice: Option<String>,
}

struct MethodCtx<'a> {
    setup: &'a Setup,
    method: &'a MethodConfig,
    bench: &'a BenchConfig,
    immutable: Vec<bool>,
    class_prior: Option<LaplaceClassPrior>,
    class_prior_error: Option<String>,
    seed: u64,
}

impl MethodCtx<'_> {
    fn generate(&self, params: Params, row: usize) -> cfprior_core::Result<GenResult> {
        let s = self.setup;
        let reference: DVector<f64> = s.rows.row(row).transpose();
        let mut req = GenRequest::new(reference, self.bench.target, self.bench.count, derive_seed(self.seed, row as u64));
        req.threshold = self.bench.threshold;
        let m = self.method;
        let optimize = |variant| {
            let objective = ObjectiveConfig {
                variant,
                gamma: params.gamma,
                alpha: params.alpha,
                lambda_div: m.lambda_div,
                reg_weight: params.reg_weight,
                fidelity_weight: 1.0,
            };
            let cfg = OptimizeConfig { objective, adam: AdamConfig::new(m.learning_rate, m.steps), ..OptimizeConfig::default() };
            gen_optimize(&req, &s.clf, Some(&s.prior), &self.immutable, &cfg)
        };
        match m.kind {
            MethodKind::Wachter => optimize(Variant::Wachter),
            MethodKind::Ours => optimize(Variant::Ours),
            MethodKind::Regularized => optimize(Variant::Regularized),
            MethodKind::PosteriorSample => {
                let Some(class_prior) = &self.class_prior else {
                    let msg = self.class_prior_error.clone().unwrap_or_default();
                    return Err(cfprior_core::Error::InvalidData(format!("class prior unavailable: {msg}")));
                };
                let joint = JointCfPrior::build(s.prior.clone(), params.alpha, &self.immutable)?;
                let act = s.conditional.as_ref().map(|conditional| Actionability { policy: &s.policy, conditional });
                gen_posterior_sample(&req, PosteriorSource::Laplace { class_prior, joint: &joint }, act, Some(&s.clf))
            }
            MethodKind::GrowingSpheres => {
                let metric = Metric::from_kind(m.metric, &s.prior, params.alpha)?;
                gen_growing_spheres(&req, &s.clf, &metric, &self.immutable, &m.spheres)
            }
            MethodKind::Face => {
                let metric = Metric::from_kind(m.metric, &s.prior, params.alpha)?;
                gen_face(&req, &s.clf, &s.rows, &metric, &self.immutable, &FaceConfig { k: params.face_k })
            }
        }
    }

    /// Records and failures for `rows`, in task order.
    fn evaluate(&self, params: Params, rows: &[usize]) -> (Vec<InstanceRecord>, Vec<(usize, usize, String)>) {
        let s = self.setup;
        let hood = Neighbourhood { rows: &s.rows, predicted: &s.predicted, k: self.bench.k_ynn };
        let label = self.method.label();
        let results: Vec<_> = rows
            .par_iter()
            .enumerate()
            .map(|(task, &row)| {
                self.generate(params, row).map(|out| {
                    let cfs: Vec<DVector<f64>> = out.counterfactuals.into_iter().map(|c| c.point).collect();
                    let reference = s.rows.row(row).transpose();
                    instance_record(&label, task, &reference, &cfs, &s.clf, self.bench.target, self.bench.threshold, hood)
                })
            })
            .collect();
        let mut records = Vec::new();
        let mut failures = Vec::new();
        for (task, (r, &row)) in results.into_iter().zip(rows).enumerate() {
            match r {
                Ok(rec) => records.push(rec),
                Err(e) => failures.push((task, row, e.to_string())),
            }
        }
        (records, failures)
    }
}

/// Success over all requested counterfactuals, failures counting as misses.
fn grid_score(records: &[InstanceRecord], failures: usize) -> GridScore {
    let total = records.len() + failures;
    if total == 0 {
        return GridScore { success: 0.0, mean_l2: f64::INFINITY };
    }
    let success = records.iter().map(|r| r.success).sum::<f64>() / total as f64;
    let mean_l2 =
        if records.is_empty() { f64::INFINITY } else { records.iter().map(|r| r.l2).sum::<f64>() / records.len() as f64 };
    GridScore { success, mean_l2 }
}

fn run_method(setup: &Setup, cfg: &RunConfig, index: usize, seed: u64, refs: &[usize], held: &[usize]) -> CliResult<MethodOutcome> {
    let started = Instant::now();
    let method = &cfg.methods[index];
    let method_seed = derive_seed(seed, 1 << 32 | index as u64);
    let (class_prior, class_prior_error) = if method.kind == MethodKind::PosteriorSample {
        let lc = LaplaceConfig { restarts: method.restarts, seed: derive_seed(method_seed, 0), ..LaplaceConfig::default() };
        match laplace_class_prior(&setup.clf, &setup.rows, &setup.prior, cfg.bench.target, &lc) {
            Ok(p) => (Some(p), None),
            Err(e) => (None, Some(e.to_string())),
        }
    } else {
        (None, None)
    };
    let ctx = MethodCtx {
        setup,
        method,
        bench: &cfg.bench,
        immutable: setup.policy.immutable_mask(),
        class_prior,
        class_prior_error,
        seed: method_seed,
    };
    let points = method.grid();
    let mut grid = Vec::new();
    let choice = if points.len() == 1 {
        GridChoice { index: 0, feasible: true }
    } else {
        let batch = if held.is_empty() { refs } else { held };
        for &p in &points {
            let (records, failures) = ctx.evaluate(p, batch);
            grid.push((p, grid_score(&records, failures.len())));
        }
        let scores: Vec<GridScore> = grid.iter().map(|g| g.1).collect();
        select_grid_point(&scores, cfg.bench.min_success).expect("grid is non-empty")
    };
    let chosen = points[choice.index];
    let (records, failures) = ctx.evaluate(chosen, refs);
    let label = method.label();
    let report = aggregate(&label, &records, failures.len());
    Ok(MethodOutcome {
        label,
        kind: method.kind,
        grid,
        choice,
        chosen,
        records,
        failures,
        report,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// Reference rows needing a class change, shuffled by the seed and split
/// into evaluation and held-out grid batches.
pub fn select_references(setup: &Setup, bench: &BenchConfig, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut candidates: Vec<usize> = (0..setup.rows.nrows()).filter(|&i| setup.predicted[i] != bench.target).collect();
    candidates.shuffle(&mut cfprior_core::rng::stream(seed, 2));
    let refs: Vec<usize> = candidates.iter().copied().take(bench.references).collect();
    let held = candidates.iter().copied().skip(refs.len()).take(bench.held_out).collect();
    (refs, held)
}

/// Runs every configured method on `threads` workers (all cores when `None`).
pub fn run_benchmark(cfg: &RunConfig, threads: Option<usize>) -> CliResult<BenchOutput> {
    let seed = cfg.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(t) = threads {
        if t == 0 {
            return Err(CliError::InvalidParam("--threads must be at least 1".into()));
        }
        builder = builder.num_threads(t);
    }
    let pool = builder.build().map_err(|e| CliError::InvalidParam(format!("cannot start worker pool: {e}")))?;
    pool.install(|| {
        let setup = prepare(cfg, seed)?;
        if cfg.bench.target >= setup.clf.class_count() {
            return Err(CliError::InvalidParam(format!(
                "target {} exceeds class count {}",
                cfg.bench.target,
                setup.clf.class_count()
            )));
        }
        let (refs, held) = select_references(&setup, &cfg.bench, seed);
        let notice = if refs.is_empty() {
            Some("no references need a class change; the report is empty".to_string())
        } else if cfg.methods.is_empty() {
            Some("no methods configured; the report is empty".to_string())
        } else {
            None
        };
        let mut methods = Vec::new();
        if !refs.is_empty() {
            for i in 0..cfg.methods.len() {
                methods.push(run_method(&setup, cfg, i, seed, &refs, &held)?);
            }
        }
        Ok(BenchOutput { seed, references: refs, held_out: held, methods, notice })
    })
}

fn opt(v: Option<f64>) -> String {
    v.map(format_number).unwrap_or_default()
}

/// `report.csv`: one row per (method, metric).
pub fn report_csv(out: &BenchOutput) -> String {
    let mut s = String::from("method,metric,value,n,failures\n");
    for m in &out.methods {
        let r = &m.report;
        let rows = [
            ("l2", Some(r.l2)),
            ("linf", Some(r.linf)),
            ("ynn", Some(r.ynn)),
            ("redundancy", Some(r.redundancy)),
            ("diversity", r.diversity),
            ("success", Some(r.success)),
        ];
        for (name, v) in rows {
            let _ = writeln!(s, "{},{name},{},{},{}", r.method, opt(v), r.n, r.failures);
        }
    }
    s
}

/// `report.txt`: aligned table plus the chosen grid points.
pub fn report_text(out: &BenchOutput) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "seed {}  references {}  held-out {}", out.seed, out.references.len(), out.held_out.len());
    if let Some(n) = &out.notice {
        let _ = writeln!(s, "notice: {n}");
    }
    let _ = writeln!(
        s,
        "{:<20} {:>10} {:>10} {:>8} {:>8} {:>10} {:>8} {:>6} {:>8}",
        "method", "l2", "linf", "yNN", "Redun.", "Div.", "success", "n", "failures"
    );
    for m in &out.methods {
        let r = &m.report;
        let div = r.diversity.map(|d| format!("{d:.4}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<20} {:>10.4} {:>10.4} {:>8.4} {:>8.4} {:>10} {:>8.4} {:>6} {:>8}",
            r.method, r.l2, r.linf, r.ynn, r.redundancy, div, r.success, r.n, r.failures
        );
    }
    let _ = writeln!(s);
    for m in &out.methods {
        let p = m.chosen;
        let _ = writeln!(
            s,
            "{}: alpha {} gamma {} reg_weight {} face_k {} ({} of {} grid points{})",
            m.label,
            p.alpha,
            p.gamma,
            p.reg_weight,
            p.face_k,
            m.choice.index + 1,
            m.grid.len().max(1),
            if m.choice.feasible { "" } else { ", success target not met" }
        );
    }
    s
}

pub fn records_csv(out: &BenchOutput) -> String {
    let mut s = String::from("method,task,row,l2,linf,ynn,redundancy,diversity,success,count\n");
    for m in &out.methods {
        for r in &m.records {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{},{}",
                r.method,
                r.task,
                out.references[r.task],
                format_number(r.l2),
                format_number(r.linf),
                format_number(r.ynn),
                format_number(r.redundancy),
                opt(r.diversity),
                format_number(r.success),
                r.count
            );
        }
    }
    s
}

fn csv_field(text: &str) -> String {
    format!("\"{}\"", text.replace('"', "\"\""))
}

pub fn failures_csv(out: &BenchOutput) -> String {
    let mut s = String::from("method,task,row,error\n");
    for m in &out.methods {
        for (task, row, msg) in &m.failures {
            let _ = writeln!(s, "{},{task},{row},{}", m.label, csv_field(msg));
        }
    }
    s
}

pub fn grid_csv(out: &BenchOutput) -> String {
    let mut s = String::from("method,alpha,gamma,reg_weight,face_k,success,mean_l2,chosen\n");
    for m in &out.methods {
        for (i, (p, g)) in m.grid.iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{}",
                m.label,
                format_number(p.alpha),
                format_number(p.gamma),
                format_number(p.reg_weight),
                p.face_k,
                format_number(g.success),
                format_number(g.mean_l2),
                i == m.choice.index
            );
        }
    }
    s
}

pub fn timing_csv(out: &BenchOutput) -> String {
    let mut s = String::from("method,seconds,seconds_per_reference\n");
    for m in &out.methods {
        let per = m.seconds / out.references.len().max(1) as f64;
        let _ = writeln!(s, "{},{:.6},{:.6}", m.label, m.seconds, per);
    }
    s
}

/// Writes the deterministic report files and the separate `timing.csv`.
pub fn write_reports(out: &BenchOutput, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let files = [
        ("report.csv", report_csv(out)),
        ("report.txt", report_text(out)),
        ("records.csv", records_csv(out)),
        ("failures.csv", failures_csv(out)),
        ("grid.csv", grid_csv(out)),
        ("timing.csv", timing_csv(out)),
    ];
    for (name, text) in files {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|e| CliError::io(&path, e))?;
    }
    Ok(())
}
