//! `rescal`: train, cross-validate and query RESCAL models from the shell.
//!
//! Every command ends its standard output with one JSON object; progress
//! and human-readable summaries go to standard error. Exit status is 0 on
//! success, 1 when the computation fails and 2 for usage, configuration or
//! input-file problems.

mod fetch;
mod predict;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rescal::run::{self, RunConfig};
use rescal::{Init, RescalError, Solver};
use serde_json::{json, Value};

#[derive(Parser)]
#[command(name = "rescal", version, about = "RESCAL tensor factorization for multi-relational data")]
struct Cli {
    /// Worker threads for fold-level and per-relation parallelism (0: all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,

    /// More log output on stderr (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit one model on a triple file and write it with its trace and dictionaries.
    Train(RunArgs),
    /// Cross-validate on a triple file and write report.json and PR curves.
    Cv(RunArgs),
    /// Score triples with a trained model; `?` in one position ranks all candidates.
    Predict(predict::PredictArgs),
    /// Print a model file's header.
    Inspect {
        model: PathBuf,
    },
    /// Download triple files from explicit URLs (NAME=URL) into a directory.
    FetchData(fetch::FetchArgs),
    /// Score every cell of a triple file with a trained model and write its PR curve.
    ExportCurve(ExportCurveArgs),
}

/// Flags mirroring the fields of a run configuration; each one overrides
/// the value read from `--config`.
#[derive(Args)]
struct RunArgs {
    /// JSON run configuration, or a manifest.json from an earlier run.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Tab-separated triple file (subject, relation, object).
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// `als` (least squares) or `logit` (logistic loss).
    #[arg(long)]
    solver: Option<Solver>,
    /// Latent dimension r.
    #[arg(long)]
    rank: Option<usize>,
    /// Ridge weight on the entity factors A.
    #[arg(long = "lambda_a", alias = "lambda-a")]
    lambda_a: Option<f64>,
    /// Ridge weight on the relation matrices R_k.
    #[arg(long = "lambda_r", alias = "lambda-r")]
    lambda_r: Option<f64>,
    /// Relative objective decrease below which fitting stops.
    #[arg(long)]
    tol: Option<f64>,
    /// Iteration cap (ALS sweeps or L-BFGS iterations).
    #[arg(long = "max_iter", alias = "max-iter")]
    max_iter: Option<usize>,
    /// Seed for random initialization and fold shuffling.
    #[arg(long)]
    seed: Option<u64>,
    /// Number of cross-validation folds.
    #[arg(long)]
    folds: Option<usize>,
    /// `nvecs` (leading eigenvectors) or `random`.
    #[arg(long)]
    init: Option<Init>,
    /// Largest entity count for which dense slices may be materialized.
    #[arg(long = "dense_cap", alias = "dense-cap")]
    dense_cap: Option<usize>,
    /// Output directory.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Relation held out entity by entity (targeted protocol).
    #[arg(long = "target_relation", alias = "target-relation")]
    target_relation: Option<String>,
    /// Entity list files for the targeted protocol, one pass per file.
    #[arg(long = "target_groups", alias = "target-groups", num_args = 1.., value_delimiter = ',')]
    target_groups: Option<Vec<PathBuf>>,
    /// Ranks for the grid driver, comma separated.
    #[arg(long = "grid_ranks", alias = "grid-ranks", num_args = 1.., value_delimiter = ',')]
    grid_ranks: Option<Vec<usize>>,
    /// Values of lambda_a = lambda_r for the grid driver, comma separated.
    #[arg(long = "grid_lambdas", alias = "grid-lambdas", num_args = 1.., value_delimiter = ',')]
    grid_lambdas: Option<Vec<f64>>,
}

impl RunArgs {
    fn resolve(self) -> Result<RunConfig, RescalError> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_json_file(path)?,
            None => RunConfig::default(),
        };
        macro_rules! set {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { c.$field = v; })*
            };
        }
        set!(dataset, solver, rank, lambda_a, lambda_r, tol, max_iter, seed, folds, dense_cap, output);
        set!(target_groups, grid_ranks, grid_lambdas);
        if self.init.is_some() {
            c.init = self.init;
        }
        if self.target_relation.is_some() {
            c.target_relation = self.target_relation;
        }
        Ok(c)
    }
}

#[derive(Args)]
struct ExportCurveArgs {
    #[arg(long)]
    model: PathBuf,
    /// Triple file whose cells are scored (labels must be known to the model).
    #[arg(long)]
    data: PathBuf,
    /// Restrict scoring to one relation.
    #[arg(long)]
    relation: Option<String>,
    /// Destination CSV (`recall,precision`).
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    entities: Option<PathBuf>,
    #[arg(long)]
    relations: Option<PathBuf>,
}

/// A failed command: message plus exit status.
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    pub fn usage(message: impl Into<String>) -> Self {
        Failure { code: 2, message: message.into() }
    }

    pub fn runtime(message: impl Into<String>) -> Self {
        Failure { code: 1, message: message.into() }
    }
}

impl From<RescalError> for Failure {
    fn from(e: RescalError) -> Self {
        Failure {
            code: if e.is_usage() { 2 } else { 1 },
            message: e.to_string(),
        }
    }
}

fn train(args: RunArgs) -> Result<Value, Failure> {
    let config = args.resolve()?;
    let summary = run::train(&config)?;
    let objective = summary.final_objective.map_or("n/a".into(), |f| format!("{f:.6e}"));
    eprintln!(
        "trained {} model on {} entities x {} relations: objective {objective} after {} iterations \
         (converged: {}) in {:.2}s",
        summary.solver.as_str(),
        summary.n_entities,
        summary.n_relations,
        summary.iterations,
        summary.converged,
        summary.wall_time_seconds
    );
    Ok(serde_json::to_value(&summary).expect("summaries serialize"))
}

fn cv(args: RunArgs) -> Result<Value, Failure> {
    let config = args.resolve()?;
    let summary = run::cv(&config)?;
    if summary.n_skipped > 0 {
        eprintln!("warning: {} fold(s) had no held-out positives and were skipped", summary.n_skipped);
    }
    match (summary.mean, summary.std) {
        (Some(m), Some(s)) => eprintln!("AUC-PR {m:.4} ± {s:.4} over {} folds", summary.n_folds),
        (Some(m), None) => eprintln!("AUC-PR {m:.4} over {} fold(s)", summary.n_folds),
        _ => eprintln!("no fold could be evaluated"),
    }
    Ok(serde_json::to_value(&summary).expect("summaries serialize"))
}

fn inspect(model: PathBuf) -> Result<Value, Failure> {
    let bytes = std::fs::read(&model).map_err(|e| RescalError::io(&model, e))?;
    let header = rescal::io::decode_model_header(&bytes)?;
    Ok(serde_json::to_value(&header).expect("summaries serialize"))
}

fn export_curve(args: ExportCurveArgs) -> Result<Value, Failure> {
    let trained = run::load_trained(&args.model, args.entities.as_deref(), args.relations.as_deref())?;
    let summary = run::export_curve(&trained, &args.data, args.relation.as_deref(), &args.output)?;
    eprintln!("AUC-PR {:.4} over {} cells ({} positive)", summary.auc_pr, summary.n_cells, summary.n_pos);
    Ok(serde_json::to_value(&summary).expect("summaries serialize"))
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Train(_) => "train",
        Command::Cv(_) => "cv",
        Command::Predict(_) => "predict",
        Command::Inspect { .. } => "inspect",
        Command::FetchData(_) => "fetch-data",
        Command::ExportCurve(_) => "export-curve",
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .target(env_logger::Target::Stderr)
        .init();

    let name = command_name(&cli.command);
    let command = cli.command;
    let result = run::with_jobs(cli.jobs, move || match command {
        Command::Train(args) => train(args),
        Command::Cv(args) => cv(args),
        Command::Predict(args) => predict::run(args),
        Command::Inspect { model } => inspect(model),
        Command::FetchData(args) => fetch::run(args),
        Command::ExportCurve(args) => export_curve(args),
    });
    match result {
        Ok(value) => {
            println!("{value}");
            ExitCode::SUCCESS
        }
        Err(failure) => {
            eprintln!("error: {}", failure.message);
            println!("{}", json!({ "command": name, "error": failure.message, "exit_code": failure.code }));
            ExitCode::from(failure.code)
        }
    }
}
