//! Link-prediction evaluation: fold construction, masked retraining and
//! area under the precision-recall curve.

use std::collections::BTreeSet;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::als::fit_als;
use crate::error::{RescalError, Result};
use crate::logit::fit_logit;
use crate::model::{FactorModel, Hyperparams, Solver};
use crate::numeric::{probability, softplus};
use crate::par;
use crate::tensor::{Cell, SparseAdjacencyTensor};
use crate::trace::FitTrace;

/// Which cells a [`FoldPlan`] partitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FoldScope {
    /// Every cell of an `N x N x K` tensor.
    AllCells { n_entities: usize, n_relations: usize },
    /// Whole rows `(i, ., relation)` for the listed subjects.
    TargetedRows { relation: usize, subjects: Vec<usize>, n_entities: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldPlan {
    pub folds: Vec<Vec<Cell>>,
    pub scope: FoldScope,
    pub seed: Option<u64>,
}

impl FoldPlan {
    pub fn len(&self) -> usize {
        self.folds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.folds.is_empty()
    }

    /// Size of the partitioned population.
    pub fn population(&self) -> usize {
        match &self.scope {
            FoldScope::AllCells { n_entities, n_relations } => n_entities * n_entities * n_relations,
            FoldScope::TargetedRows { subjects, n_entities, .. } => subjects.len() * n_entities,
        }
    }
}

/// Shuffles all `N^2 K` cells with a seeded generator and deals them
/// round-robin into `n_folds` sets whose sizes differ by at most one.
pub fn make_kfold(tensor: &SparseAdjacencyTensor, n_folds: usize, seed: u64) -> Result<FoldPlan> {
    if n_folds < 2 {
        return Err(RescalError::Config(format!("n_folds must be >= 2, got {n_folds}")));
    }
    let (n, kk) = (tensor.n_entities(), tensor.n_relations());
    let population = n * n * kk;
    if population < n_folds {
        return Err(RescalError::Config(format!(
            "cannot split {population} cells into {n_folds} folds"
        )));
    }
    let mut cells: Vec<Cell> = Vec::with_capacity(population);
    for k in 0..kk {
        for i in 0..n {
            for j in 0..n {
                cells.push(Cell::new(i, j, k));
            }
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cells.shuffle(&mut rng);
    let mut folds = vec![Vec::with_capacity(population / n_folds + 1); n_folds];
    for (pos, cell) in cells.into_iter().enumerate() {
        folds[pos % n_folds].push(cell);
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(FoldPlan {
        folds,
        scope: FoldScope::AllCells {
            n_entities: n,
            n_relations: kk,
        },
        seed: Some(seed),
    })
}

/// Leave-one-entity-out over one relation: fold `e` holds every cell
/// `(e, j, relation)`. Duplicate subjects are ignored.
pub fn make_targeted_folds(tensor: &SparseAdjacencyTensor, relation: usize, subjects: &[usize]) -> Result<FoldPlan> {
    if subjects.is_empty() {
        return Err(RescalError::Config("targeted folds need at least one subject".into()));
    }
    if relation >= tensor.n_relations() {
        return Err(RescalError::Index(format!(
            "relation {relation} outside K={}",
            tensor.n_relations()
        )));
    }
    let n = tensor.n_entities();
    let mut seen = BTreeSet::new();
    let mut unique = Vec::with_capacity(subjects.len());
    for &e in subjects {
        if e >= n {
            return Err(RescalError::Index(format!("subject {e} outside N={n}")));
        }
        if seen.insert(e) {
            unique.push(e);
        }
    }
    let folds = unique
        .iter()
        .map(|&e| (0..n).map(|j| Cell::new(e, j, relation)).collect())
        .collect();
    Ok(FoldPlan {
        folds,
        scope: FoldScope::TargetedRows {
            relation,
            subjects: unique,
            n_entities: n,
        },
        seed: None,
    })
}

fn check_scored(labels: &[bool], scores: &[f64]) -> Result<()> {
    if labels.len() != scores.len() {
        return Err(RescalError::Dimension(format!(
            "{} labels but {} scores",
            labels.len(),
            scores.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(RescalError::Numerical("NaN score".into()));
    }
    if !labels.iter().any(|&l| l) {
        return Err(RescalError::UndefinedMetric("no positive labels".into()));
    }
    Ok(())
}

/// Indices ordered by descending score; ties keep ascending index order.
fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order
}

/// Average precision: the sum over ranked positives of the precision at that
/// rank times the recall step it contributes.
pub fn auc_pr(labels: &[bool], scores: &[f64]) -> Result<f64> {
    check_scored(labels, scores)?;
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut tp = 0usize;
    let mut recall_prev = 0.0;
    let mut area = 0.0;
    for (rank, &idx) in ranking(scores).iter().enumerate() {
        if labels[idx] {
            tp += 1;
            let precision = tp as f64 / (rank + 1) as f64;
            let recall = tp as f64 / positives;
            area += precision * (recall - recall_prev);
            recall_prev = recall;
        }
    }
    Ok(area)
}

/// `(recall, precision)` after each rank of the descending-score sweep.
pub fn pr_curve(labels: &[bool], scores: &[f64]) -> Result<Vec<(f64, f64)>> {
    check_scored(labels, scores)?;
    let positives = labels.iter().filter(|&&l| l).count() as f64;
    let mut tp = 0usize;
    Ok(ranking(scores)
        .iter()
        .enumerate()
        .map(|(rank, &idx)| {
            if labels[idx] {
                tp += 1;
            }
            (tp as f64 / positives, tp as f64 / (rank + 1) as f64)
        })
        .collect())
}

/// Fits with the solver named in `hp`.
pub fn fit(tensor: &SparseAdjacencyTensor, hp: &Hyperparams) -> Result<(FactorModel, FitTrace)> {
    match hp.solver {
        Solver::Als => fit_als(tensor, hp),
        Solver::Logit => fit_logit(tensor, hp),
    }
}

/// Held-out results of one fold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub index: usize,
    pub auc_pr: Option<f64>,
    pub n_pos: usize,
    pub n_cells: usize,
    pub skipped: bool,
    #[serde(skip)]
    pub labels: Vec<bool>,
    /// Raw scores `theta` of the held-out cells, in fold order.
    #[serde(skip)]
    pub theta: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub dataset: String,
    pub solver: Solver,
    pub hyperparams: Hyperparams,
    pub folds: Vec<FoldResult>,
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub seed: Option<u64>,
    pub dataset_checksum: String,
    pub n_skipped: usize,
    pub wall_time_seconds: f64,
}

impl EvaluationReport {
    fn evaluated(&self) -> impl Iterator<Item = f64> + '_ {
        self.folds.iter().filter_map(|f| f.auc_pr)
    }

    /// Arithmetic mean of the evaluated folds.
    pub fn recompute_mean(&self) -> Option<f64> {
        mean_std(&self.evaluated().collect::<Vec<_>>()).0
    }

    /// Sample standard deviation of the evaluated folds.
    pub fn recompute_std(&self) -> Option<f64> {
        mean_std(&self.evaluated().collect::<Vec<_>>()).1
    }

    /// Values the metric ranks for fold `idx`: probabilities for the logit
    /// solver, raw scores for ALS.
    pub fn fold_scores(&self, idx: usize) -> Vec<f64> {
        let fold = &self.folds[idx];
        match self.solver {
            Solver::Logit => fold.theta.iter().map(|&t| probability(t)).collect(),
            Solver::Als => fold.theta.clone(),
        }
    }

    /// Probability the fitted model assigns to a cell with score `theta`:
    /// `sigmoid(theta)` for the logit solver; for ALS the least-squares
    /// estimate of the indicator itself, clamped into
    /// `[ALS_PROBABILITY_FLOOR, 1 - ALS_PROBABILITY_FLOOR]`.
    pub fn cell_probability(&self, theta: f64) -> f64 {
        match self.solver {
            Solver::Logit => probability(theta),
            Solver::Als => theta.clamp(ALS_PROBABILITY_FLOOR, 1.0 - ALS_PROBABILITY_FLOOR),
        }
    }

    /// Mean of `-log p` over all held-out positives, with `p` from
    /// [`Self::cell_probability`].
    pub fn heldout_positive_cross_entropy(&self) -> Option<f64> {
        match self.solver {
            // softplus(-theta) is -log sigmoid(theta) without the clamp
            Solver::Logit => self.heldout_positive_mean(|t| softplus(-t)),
            Solver::Als => self.heldout_positive_log_loss(|t| self.cell_probability(t)),
        }
    }

    /// Mean of `-log prob(theta)` over all held-out positives.
    pub fn heldout_positive_log_loss(&self, prob: impl Fn(f64) -> f64) -> Option<f64> {
        self.heldout_positive_mean(|t| -prob(t).ln())
    }

    fn heldout_positive_mean(&self, loss: impl Fn(f64) -> f64) -> Option<f64> {
        let (mut total, mut count) = (0.0, 0usize);
        for fold in &self.folds {
            for (&label, &t) in fold.labels.iter().zip(&fold.theta) {
                if label {
                    total += loss(t);
                    count += 1;
                }
            }
        }
        (count > 0).then(|| total / count as f64)
    }
}

/// Lower clamp applied to ALS scores read as probabilities.
pub const ALS_PROBABILITY_FLOOR: f64 = 1e-3;

pub(crate) fn mean_std(values: &[f64]) -> (Option<f64>, Option<f64>) {
    if values.is_empty() {
        return (None, None);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = (values.len() > 1).then(|| {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1.0)).sqrt()
    });
    (Some(mean), std)
}

fn check_plan(tensor: &SparseAdjacencyTensor, plan: &FoldPlan) -> Result<()> {
    let n = tensor.n_entities();
    let (scope_n, scope_k) = match &plan.scope {
        FoldScope::AllCells { n_entities, n_relations } => (*n_entities, Some(*n_relations)),
        FoldScope::TargetedRows { n_entities, .. } => (*n_entities, None),
    };
    if scope_n != n || scope_k.is_some_and(|k| k != tensor.n_relations()) {
        return Err(RescalError::Dimension("fold plan was built for a different tensor".into()));
    }
    for fold in &plan.folds {
        for &cell in fold {
            tensor.check_cell(cell)?;
        }
    }
    Ok(())
}

/// Evaluates one fold: the fold's cells are zeroed, a model is fitted on
/// what remains, and exactly those cells are scored.
pub fn evaluate_fold(
    tensor: &SparseAdjacencyTensor,
    hp: &Hyperparams,
    fold: &[Cell],
    index: usize,
) -> Result<FoldResult> {
    let masked = tensor.mask_cells(fold)?;
    let (model, trace) = fit(&masked, hp)?;
    log::debug!(
        "fold {index}: {} iterations, converged = {}",
        trace.iterations_run,
        trace.converged
    );
    let labels: Vec<bool> = fold.iter().map(|c| tensor.get(c.i, c.j, c.k)).collect();
    let theta = fold
        .iter()
        .map(|c| model.score(c.i, c.j, c.k))
        .collect::<Result<Vec<_>>>()?;
    let n_pos = labels.iter().filter(|&&l| l).count();
    let auc = if n_pos == 0 {
        log::warn!("fold {index} has no held-out positives; skipped");
        None
    } else {
        let scores: Vec<f64> = match hp.solver {
            Solver::Logit => theta.iter().map(|&t| probability(t)).collect(),
            Solver::Als => theta.clone(),
        };
        Some(auc_pr(&labels, &scores)?)
    };
    Ok(FoldResult {
        index,
        auc_pr: auc,
        n_pos,
        n_cells: fold.len(),
        skipped: n_pos == 0,
        labels,
        theta,
    })
}

/// Runs every fold of `plan` (in parallel when enabled) and aggregates the
/// per-fold AUC-PR in fold order.
pub fn run_cv(tensor: &SparseAdjacencyTensor, hp: &Hyperparams, plan: &FoldPlan) -> Result<EvaluationReport> {
    hp.validate()?;
    check_plan(tensor, plan)?;
    let start = Instant::now();
    let folds = par::map_range(plan.folds.len(), |idx| evaluate_fold(tensor, hp, &plan.folds[idx], idx))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let values: Vec<f64> = folds.iter().filter_map(|f| f.auc_pr).collect();
    let (mean, std) = mean_std(&values);
    let n_skipped = folds.iter().filter(|f| f.skipped).count();
    Ok(EvaluationReport {
        dataset: String::new(),
        solver: hp.solver,
        hyperparams: hp.clone(),
        folds,
        mean,
        std,
        seed: plan.seed,
        dataset_checksum: tensor.checksum(),
        n_skipped,
        wall_time_seconds: start.elapsed().as_secs_f64(),
    })
}

/// Reports for each subject group of a targeted protocol and the mean over
/// all of their evaluated folds.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetedReport {
    pub reports: Vec<EvaluationReport>,
    pub pooled_mean: Option<f64>,
}

/// Holds out `relation` for one subject group at a time (for example
/// presidents, then vice-presidents) and pools the fold results.
pub fn run_targeted(
    tensor: &SparseAdjacencyTensor,
    hp: &Hyperparams,
    relation: usize,
    groups: &[Vec<usize>],
) -> Result<TargetedReport> {
    let reports = groups
        .iter()
        .map(|group| {
            let plan = make_targeted_folds(tensor, relation, group)?;
            run_cv(tensor, hp, &plan)
        })
        .collect::<Result<Vec<_>>>()?;
    let pooled: Vec<f64> = reports.iter().flat_map(|r| r.evaluated()).collect();
    Ok(TargetedReport {
        pooled_mean: mean_std(&pooled).0,
        reports,
    })
}

/// Evaluates every `(rank, lambda)` pair on the same plan, with
/// `lambda_a = lambda_r = lambda`. Returns all reports in grid order.
pub fn grid_search(
    tensor: &SparseAdjacencyTensor,
    base: &Hyperparams,
    ranks: &[usize],
    lambdas: &[f64],
    plan: &FoldPlan,
) -> Result<Vec<EvaluationReport>> {
    let mut out = Vec::with_capacity(ranks.len() * lambdas.len());
    for &rank in ranks {
        for &lambda in lambdas {
            let mut hp = base.clone();
            hp.rank = rank;
            hp.lambda_a = lambda;
            hp.lambda_r = lambda;
            let report = run_cv(tensor, &hp, plan)?;
            log::info!("grid rank={rank} lambda={lambda}: mean AUC-PR {:?}", report.mean);
            out.push(report);
        }
    }
    Ok(out)
}

/// Highest mean AUC-PR; the earliest entry wins ties.
pub fn best_report(reports: &[EvaluationReport]) -> Option<&EvaluationReport> {
    reports
        .iter()
        .filter(|r| r.mean.is_some())
        .fold(None, |best: Option<&EvaluationReport>, r| match best {
            Some(b) if b.mean >= r.mean => Some(b),
            _ => Some(r),
        })
}
