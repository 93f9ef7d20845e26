//! On-disk jobs behind the command-line front end: `train`, `cv` and
//! `export-curve`. Each job writes its outputs atomically into one
//! directory together with a manifest that can be fed back as `--config`
//! to repeat the run.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{RescalError, Result};
use crate::eval::{self, make_kfold, run_cv, EvaluationReport};
use crate::io;
use crate::model::{FactorModel, Hyperparams, Init, Solver};
use crate::par;
use crate::tensor::{from_triples, Dictionary, SparseAdjacencyTensor, DEFAULT_DENSE_CAP};

/// Build identifier recorded in manifests.
pub const GIT_DESCRIBE: &str = env!("RESCAL_GIT_DESCRIBE");

pub const MODEL_FILE: &str = "model.bin";
pub const TRACE_FILE: &str = "trace.csv";
pub const ENTITIES_FILE: &str = "entities.tsv";
pub const RELATIONS_FILE: &str = "relations.tsv";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const REPORT_FILE: &str = "report.json";
pub const CURVES_DIR: &str = "curves";

/// Everything needed to reproduce a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: PathBuf,
    pub solver: Solver,
    pub rank: usize,
    pub lambda_a: f64,
    pub lambda_r: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub seed: u64,
    pub folds: usize,
    /// Defaults to `nvecs` for ALS and `random` for logit.
    pub init: Option<Init>,
    pub dense_cap: usize,
    pub output: PathBuf,
    /// Relation held out by the targeted protocol; plain k-fold when unset.
    pub target_relation: Option<String>,
    /// Files listing one entity label per line; one protocol pass per file.
    pub target_groups: Vec<PathBuf>,
    /// Ranks tried by the grid driver (empty: use `rank` only).
    pub grid_ranks: Vec<usize>,
    /// Values tried for `lambda_a = lambda_r` by the grid driver.
    pub grid_lambdas: Vec<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let hp = Hyperparams::als(10);
        RunConfig {
            dataset: PathBuf::new(),
            solver: Solver::Als,
            rank: hp.rank,
            lambda_a: hp.lambda_a,
            lambda_r: hp.lambda_r,
            tol: hp.tol,
            max_iter: hp.max_iter,
            seed: hp.seed,
            folds: 10,
            init: None,
            dense_cap: DEFAULT_DENSE_CAP,
            output: PathBuf::from("out"),
            target_relation: None,
            target_groups: Vec::new(),
            grid_ranks: Vec::new(),
            grid_lambdas: Vec::new(),
        }
    }
}

impl RunConfig {
    pub fn hyperparams(&self) -> Hyperparams {
        Hyperparams {
            rank: self.rank,
            lambda_a: self.lambda_a,
            lambda_r: self.lambda_r,
            solver: self.solver,
            max_iter: self.max_iter,
            tol: self.tol,
            seed: self.seed,
            init: self.init.unwrap_or(self.solver.default_init()),
            dense_cap: self.dense_cap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset.as_os_str().is_empty() {
            return Err(RescalError::Config("dataset path is empty".into()));
        }
        if self.output.as_os_str().is_empty() {
            return Err(RescalError::Config("output directory is empty".into()));
        }
        self.hyperparams().validate()?;
        if self.grid_ranks.contains(&0) {
            return Err(RescalError::Config("grid ranks must be >= 1".into()));
        }
        if self.grid_lambdas.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(RescalError::Config("grid lambdas must be finite and >= 0".into()));
        }
        if self.target_relation.is_some() != !self.target_groups.is_empty() {
            return Err(RescalError::Config(
                "target_relation and target_groups must be given together".into(),
            ));
        }
        Ok(())
    }

    fn validate_cv(&self) -> Result<()> {
        self.validate()?;
        if self.target_relation.is_none() && self.folds < 2 {
            return Err(RescalError::Config(format!("folds must be >= 2, got {}", self.folds)));
        }
        Ok(())
    }

    /// Reads a JSON config. A manifest written by an earlier run is accepted
    /// too; its `config` object is used.
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| RescalError::io(path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)?;
        let config = match value.get("config") {
            Some(inner) if value.get("command").is_some() => inner.clone(),
            _ => value,
        };
        Ok(serde_json::from_value(config)?)
    }
}

/// Written next to every run's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub git_describe: String,
    pub command: String,
    pub config: RunConfig,
    pub dataset_checksum: String,
    pub seed: u64,
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    io::write_atomic(path, |w| {
        w.write_all(text.as_bytes())?;
        w.write_all(b"\n")
    })
}

fn write_manifest(config: &RunConfig, command: &str, checksum: &str) -> Result<()> {
    let manifest = Manifest {
        tool: "rescal".into(),
        version: env!("CARGO_PKG_VERSION").into(),
        git_describe: GIT_DESCRIBE.into(),
        command: command.into(),
        config: config.clone(),
        dataset_checksum: checksum.into(),
        seed: config.seed,
    };
    write_json(&config.output.join(MANIFEST_FILE), &manifest)
}

/// A parsed triple file.
pub struct Dataset {
    pub name: String,
    pub entities: Dictionary,
    pub relations: Dictionary,
    pub tensor: SparseAdjacencyTensor,
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let triples = io::read_triples(path)?;
    let (entities, relations, tensor) = from_triples(&triples);
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(Dataset {
        name,
        entities,
        relations,
        tensor,
    })
}

fn prepare_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RescalError::io(dir, e))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub command: String,
    pub solver: Solver,
    pub n_entities: usize,
    pub n_relations: usize,
    pub nnz: usize,
    pub final_objective: Option<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub wall_time_seconds: f64,
    pub model: PathBuf,
}

/// Fits one model on the whole dataset and writes the model file, the
/// trace, both dictionaries and the manifest.
pub fn train(config: &RunConfig) -> Result<TrainSummary> {
    config.validate()?;
    let hp = config.hyperparams();
    let data = load_dataset(&config.dataset)?;
    prepare_output(&config.output)?;
    let (model, trace) = eval::fit(&data.tensor, &hp)?;
    let out = &config.output;
    let model_path = out.join(MODEL_FILE);
    io::save_model(&model_path, &model, &hp, &data.tensor.checksum_bytes())?;
    io::write_trace_csv(&out.join(TRACE_FILE), &trace)?;
    io::write_dictionary(&out.join(ENTITIES_FILE), &data.entities)?;
    io::write_dictionary(&out.join(RELATIONS_FILE), &data.relations)?;
    write_manifest(config, "train", &data.tensor.checksum())?;
    Ok(TrainSummary {
        command: "train".into(),
        solver: hp.solver,
        n_entities: data.tensor.n_entities(),
        n_relations: data.tensor.n_relations(),
        nnz: data.tensor.nnz(),
        final_objective: trace.final_objective().or(trace.initial_objective),
        iterations: trace.iterations_run,
        converged: trace.converged,
        wall_time_seconds: trace.wall_time,
        model: model_path,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub rank: usize,
    pub lambda: f64,
    pub mean: Option<f64>,
    pub std: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TargetedSummary {
    pub protocol: String,
    pub relation: String,
    pub pooled_mean: Option<f64>,
    pub groups: Vec<EvaluationReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub command: String,
    pub dataset: String,
    pub solver: Solver,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub n_folds: usize,
    pub n_skipped: usize,
    pub report: PathBuf,
    pub wall_time_seconds: f64,
}

fn write_curves(dir: &Path, report: &EvaluationReport, prefix: &str) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RescalError::io(dir, e))?;
    for fold in report.folds.iter().filter(|f| !f.skipped) {
        let curve = eval::pr_curve(&fold.labels, &report.fold_scores(fold.index))?;
        io::write_curve_csv(&dir.join(format!("{prefix}fold_{:02}.csv", fold.index)), &curve)?;
    }
    Ok(())
}

fn read_group(path: &Path, entities: &Dictionary) -> Result<Vec<usize>> {
    let text = fs::read_to_string(path).map_err(|e| RescalError::io(path, e))?;
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|label| {
            entities.get(label).ok_or_else(|| {
                RescalError::Config(format!("{}: unknown entity {label:?}", path.display()))
            })
        })
        .collect()
}

/// Cross-validates and writes `report.json`, per-fold PR curves and the
/// manifest. With grid values set, every grid point is evaluated on the
/// same folds, `grid.json` lists them, and the best one is reported.
pub fn cv(config: &RunConfig) -> Result<CvSummary> {
    config.validate_cv()?;
    let data = load_dataset(&config.dataset)?;
    prepare_output(&config.output)?;
    let out = &config.output;
    let report_path = out.join(REPORT_FILE);
    let hp = config.hyperparams();

    if let Some(relation) = &config.target_relation {
        let k = data
            .relations
            .get(relation)
            .ok_or_else(|| RescalError::Config(format!("unknown relation {relation:?}")))?;
        let groups = config
            .target_groups
            .iter()
            .map(|p| read_group(p, &data.entities))
            .collect::<Result<Vec<_>>>()?;
        let mut targeted = eval::run_targeted(&data.tensor, &hp, k, &groups)?;
        for (g, report) in targeted.reports.iter_mut().enumerate() {
            report.dataset = data.name.clone();
            write_curves(&out.join(CURVES_DIR), report, &format!("group_{g}_"))?;
        }
        let n_folds = targeted.reports.iter().map(|r| r.folds.len()).sum();
        let n_skipped = targeted.reports.iter().map(|r| r.n_skipped).sum();
        let wall = targeted.reports.iter().map(|r| r.wall_time_seconds).sum();
        let summary = TargetedSummary {
            protocol: "targeted".into(),
            relation: relation.clone(),
            pooled_mean: targeted.pooled_mean,
            groups: targeted.reports,
        };
        write_json(&report_path, &summary)?;
        write_manifest(config, "cv", &data.tensor.checksum())?;
        return Ok(CvSummary {
            command: "cv".into(),
            dataset: data.name,
            solver: hp.solver,
            mean: summary.pooled_mean,
            std: None,
            n_folds,
            n_skipped,
            report: report_path,
            wall_time_seconds: wall,
        });
    }

    let plan = make_kfold(&data.tensor, config.folds, config.seed)?;
    let mut report = if config.grid_ranks.is_empty() && config.grid_lambdas.is_empty() {
        run_cv(&data.tensor, &hp, &plan)?
    } else {
        let ranks = if config.grid_ranks.is_empty() { vec![config.rank] } else { config.grid_ranks.clone() };
        let lambdas = if config.grid_lambdas.is_empty() { vec![config.lambda_a] } else { config.grid_lambdas.clone() };
        let reports = eval::grid_search(&data.tensor, &hp, &ranks, &lambdas, &plan)?;
        let grid: Vec<GridEntry> = reports
            .iter()
            .map(|r| GridEntry {
                rank: r.hyperparams.rank,
                lambda: r.hyperparams.lambda_a,
                mean: r.mean,
                std: r.std,
            })
            .collect();
        write_json(&out.join("grid.json"), &grid)?;
        eval::best_report(&reports)
            .cloned()
            .ok_or_else(|| RescalError::UndefinedMetric("no grid point produced an evaluated fold".into()))?
    };
    report.dataset = data.name.clone();
    write_json(&report_path, &report)?;
    write_curves(&out.join(CURVES_DIR), &report, "")?;
    write_manifest(config, "cv", &data.tensor.checksum())?;
    Ok(CvSummary {
        command: "cv".into(),
        dataset: data.name,
        solver: report.solver,
        mean: report.mean,
        std: report.std,
        n_folds: report.folds.len(),
        n_skipped: report.n_skipped,
        report: report_path,
        wall_time_seconds: report.wall_time_seconds,
    })
}

/// Runs `f` with `jobs` worker threads (0: all available).
pub fn with_jobs<R: Send>(jobs: usize, f: impl FnOnce() -> R + Send) -> R {
    par::with_jobs(jobs, f)
}

/// A model file together with the dictionaries written beside it.
pub struct TrainedModel {
    pub header: io::ModelHeader,
    pub model: FactorModel,
    pub entities: Dictionary,
    pub relations: Dictionary,
}

/// Loads `model.bin`-style files; dictionaries default to the files written
/// by `train` in the same directory.
pub fn load_trained(model_path: &Path, entities: Option<&Path>, relations: Option<&Path>) -> Result<TrainedModel> {
    let (header, model) = io::load_model(model_path)?;
    let dir = model_path.parent().unwrap_or(Path::new("."));
    let entities = io::read_dictionary(&entities.map(Path::to_path_buf).unwrap_or_else(|| dir.join(ENTITIES_FILE)))?;
    let relations =
        io::read_dictionary(&relations.map(Path::to_path_buf).unwrap_or_else(|| dir.join(RELATIONS_FILE)))?;
    if entities.len() != model.n_entities() || relations.len() != model.n_relations() {
        return Err(RescalError::Dimension(format!(
            "dictionaries hold {} entities and {} relations but the model has N={}, K={}",
            entities.len(),
            relations.len(),
            model.n_entities(),
            model.n_relations()
        )));
    }
    Ok(TrainedModel {
        header,
        model,
        entities,
        relations,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveSummary {
    pub command: String,
    pub auc_pr: f64,
    pub n_cells: usize,
    pub n_pos: usize,
    pub curve: PathBuf,
}

/// Scores every cell (optionally of one relation) of `data` with a trained
/// model and writes its precision-recall curve. The triple file must only
/// use labels known to the model.
pub fn export_curve(trained: &TrainedModel, data: &Path, relation: Option<&str>, out: &Path) -> Result<CurveSummary> {
    let triples = io::read_triples(data)?;
    let n = trained.model.n_entities();
    let mut slices = vec![Vec::new(); trained.model.n_relations()];
    for t in &triples {
        let lookup = |dict: &Dictionary, label: &str| {
            dict.get(label)
                .ok_or_else(|| RescalError::Config(format!("label {label:?} is not known to the model")))
        };
        let i = lookup(&trained.entities, &t.subject)?;
        let k = lookup(&trained.relations, &t.relation)?;
        let j = lookup(&trained.entities, &t.object)?;
        slices[k].push((i, j));
    }
    let tensor = SparseAdjacencyTensor::from_slices(n, slices)?;
    let relations: Vec<usize> = match relation {
        Some(label) => vec![trained
            .relations
            .get(label)
            .ok_or_else(|| RescalError::Config(format!("unknown relation {label:?}")))?],
        None => (0..tensor.n_relations()).collect(),
    };
    let mut labels = Vec::new();
    let mut scores = Vec::new();
    for &k in &relations {
        for i in 0..n {
            for j in 0..n {
                labels.push(tensor.get(i, j, k));
                scores.push(trained.model.score(i, j, k)?);
            }
        }
    }
    let auc = eval::auc_pr(&labels, &scores)?;
    let curve = eval::pr_curve(&labels, &scores)?;
    io::write_curve_csv(out, &curve)?;
    Ok(CurveSummary {
        command: "export-curve".into(),
        auc_pr: auc,
        n_cells: labels.len(),
        n_pos: labels.iter().filter(|&&l| l).count(),
        curve: out.to_path_buf(),
    })
}
