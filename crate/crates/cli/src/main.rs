use std::path::PathBuf;
use std::process::ExitCode;

use cfprior::commands::{
    cmd_bench, cmd_density_grid, cmd_fit, cmd_generate, BenchOverrides, FitArgs, GenerateArgs, ReferenceSpec,
};
use cfprior::config::{DataConfig, MethodKind, ModelConfig, RunConfig};
use cfprior::{CliError, CliResult};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "cfprior", version, about = "Counterfactual explanations under a joint Gaussian prior")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Wachter,
    Ours,
    Regularized,
    PosteriorSample,
    GrowingSpheres,
    Face,
}

impl From<Method> for MethodKind {
    fn from(m: Method) -> Self {
        match m {
            Method::Wachter => MethodKind::Wachter,
            Method::Ours => MethodKind::Ours,
            Method::Regularized => MethodKind::Regularized,
            Method::PosteriorSample => MethodKind::PosteriorSample,
            Method::GrowingSpheres => MethodKind::GrowingSpheres,
            Method::Face => MethodKind::Face,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Fit the schema, data prior and classifier on a CSV dataset.
    Fit {
        /// Bench-style config whose [data] and [model] sections are used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        schema: Option<PathBuf>,
        /// Label column.
        #[arg(long)]
        label: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// Artifact directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate counterfactuals for one reference row.
    Generate {
        /// Artifact directory written by `fit`.
        #[arg(long)]
        model: PathBuf,
        /// Training CSV (for --index, face and posterior-sample).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Reference row index into --data.
        #[arg(long, conflicts_with = "row")]
        index: Option<usize>,
        /// Reference as comma-separated raw values in schema order.
        #[arg(long)]
        row: Option<String>,
        /// Target class label.
        #[arg(long)]
        target: String,
        #[arg(long, value_enum, default_value = "ours")]
        method: Method,
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long, default_value_t = 1.0)]
        gamma: f64,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the benchmark described by a config file.
    Bench {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Restrict to these method labels (repeatable).
        #[arg(long)]
        method: Vec<String>,
        /// Replace every method's alpha grid by this value.
        #[arg(long)]
        alpha: Option<f64>,
        /// Replace every method's gamma grid by this value.
        #[arg(long)]
        gamma: Option<f64>,
        /// Target class index.
        #[arg(long)]
        target: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        k_ynn: Option<usize>,
        /// Worker threads (defaults to all cores).
        #[arg(long)]
        threads: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Tabulate a prior or posterior log-density on a 2-D grid.
    DensityGrid {
        /// TOML density spec.
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        grid_res: Option<usize>,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { config, data, schema, label, seed, out } => {
            let (mut d, mut s, mut l, mut model, mut cfg_seed) = (None, None, None, ModelConfig::default(), None);
            if let Some(path) = &config {
                let cfg = RunConfig::load(path)?;
                if let DataConfig::Csv { path, schema, label } = cfg.data {
                    (d, s, l) = (Some(path), Some(schema), Some(label));
                }
                model = cfg.model;
                cfg_seed = cfg.seed;
            }
            let missing = |what: &str| CliError::InvalidParam(format!("fit needs --{what} (or a CSV [data] section in --config)"));
            let data = data.or(d).ok_or_else(|| missing("data"))?;
            let schema = schema.or(s).ok_or_else(|| missing("schema"))?;
            let label = label.or(l).ok_or_else(|| missing("label"))?;
            let seed = seed.or(cfg_seed).ok_or_else(|| missing("seed"))?;
            let accuracy = cmd_fit(&FitArgs { data: &data, schema: &schema, label: &label, model, seed, out: &out })?;
            println!("training accuracy {accuracy:.4}; artifacts in {}", out.display());
        }
        Command::Generate { model, data, index, row, target, method, alpha, gamma, count, seed, out } => {
            let reference = match (index, &row) {
                (Some(i), _) => ReferenceSpec::Index(i),
                (None, Some(r)) => ReferenceSpec::Cells(r),
                (None, None) => return Err(CliError::InvalidParam("give the reference with --index or --row".into())),
            };
            let args = GenerateArgs {
                artifacts: &model,
                data: data.as_deref(),
                reference,
                target: &target,
                method: method.into(),
                alpha,
                gamma,
                count,
                seed,
                out: &out,
            };
            let result = cmd_generate(&args)?;
            println!(
                "{} counterfactuals, success rate {:.4}; written to {}",
                result.counterfactuals.len(),
                result.success_rate(),
                out.display()
            );
        }
        Command::Bench { config, seed, method, alpha, gamma, target, count, k_ynn, threads, out } => {
            let overrides = BenchOverrides { seed, methods: method, alpha, gamma, target, count, k_ynn };
            let result = cmd_bench(&config, &overrides, threads, &out)?;
            print!("{}", cfprior::bench::report_text(&result));
        }
        Command::DensityGrid { config, grid_res, out } => {
            let (x, y, lp) = cmd_density_grid(&config, grid_res, &out)?;
            println!("grid maximum log density {lp:.6} at ({x:.6}, {y:.6}); written to {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
