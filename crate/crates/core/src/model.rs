//! Latent factors `A` (entities) and `R_k` (relations) and the bilinear
//! scores they define.

use nalgebra::{DMatrix, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{RescalError, Result};
use crate::numeric;
use crate::tensor::{SparseAdjacencyTensor, DEFAULT_DENSE_CAP};

/// Standard deviation of the entries drawn by random initialization.
pub const RANDOM_INIT_SCALE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Solver {
    Als,
    Logit,
}

impl Solver {
    pub fn as_str(self) -> &'static str {
        match self {
            Solver::Als => "als",
            Solver::Logit => "logit",
        }
    }

    /// Initialization used when none is requested explicitly.
    pub fn default_init(self) -> Init {
        match self {
            Solver::Als => Init::Nvecs,
            Solver::Logit => Init::Random,
        }
    }
}

impl std::str::FromStr for Solver {
    type Err = RescalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "als" => Ok(Solver::Als),
            "logit" => Ok(Solver::Logit),
            other => Err(RescalError::Config(format!("unknown solver {other:?} (expected als or logit)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Init {
    Random,
    Nvecs,
}

impl Init {
    pub fn as_str(self) -> &'static str {
        match self {
            Init::Random => "random",
            Init::Nvecs => "nvecs",
        }
    }
}

impl std::str::FromStr for Init {
    type Err = RescalError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(Init::Random),
            "nvecs" => Ok(Init::Nvecs),
            other => Err(RescalError::Config(format!("unknown init {other:?} (expected random or nvecs)"))),
        }
    }
}

/// Model and solver settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub rank: usize,
    /// Penalty weight on `||A||_F^2`.
    pub lambda_a: f64,
    /// Penalty weight on each `||R_k||_F^2`.
    pub lambda_r: f64,
    pub solver: Solver,
    pub max_iter: usize,
    /// Relative objective change below which fitting stops.
    pub tol: f64,
    pub seed: u64,
    pub init: Init,
    /// Largest `N` for which dense slices may be materialized.
    pub dense_cap: usize,
}

impl Hyperparams {
    pub fn new(solver: Solver, rank: usize) -> Self {
        Hyperparams {
            rank,
            lambda_a: 10.0,
            lambda_r: 10.0,
            solver,
            max_iter: 500,
            tol: 1e-5,
            seed: 0,
            init: solver.default_init(),
            dense_cap: DEFAULT_DENSE_CAP,
        }
    }

    pub fn als(rank: usize) -> Self {
        Self::new(Solver::Als, rank)
    }

    pub fn logit(rank: usize) -> Self {
        Self::new(Solver::Logit, rank)
    }

    pub fn with_lambda(mut self, lambda_a: f64, lambda_r: f64) -> Self {
        self.lambda_a = lambda_a;
        self.lambda_r = lambda_r;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_init(mut self, init: Init) -> Self {
        self.init = init;
        self
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = max_iter;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(RescalError::Config(msg));
        if self.rank < 1 {
            return fail(format!("rank must be >= 1, got {}", self.rank));
        }
        if !(self.lambda_a >= 0.0 && self.lambda_a.is_finite()) {
            return fail(format!("lambda_a must be finite and >= 0, got {}", self.lambda_a));
        }
        if !(self.lambda_r >= 0.0 && self.lambda_r.is_finite()) {
            return fail(format!("lambda_r must be finite and >= 0, got {}", self.lambda_r));
        }
        if !(self.tol > 0.0) {
            return fail(format!("tol must be > 0, got {}", self.tol));
        }
        if self.max_iter < 1 {
            return fail("max_iter must be >= 1".into());
        }
        if self.dense_cap < 1 {
            return fail("dense_cap must be >= 1".into());
        }
        Ok(())
    }
}

/// The factorization `X_k ~ A R_k A^T`.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorModel {
    a: DMatrix<f64>,
    r: Vec<DMatrix<f64>>,
}

impl FactorModel {
    /// Checks shapes (`A` is `N x r`, every `R_k` is `r x r`) and finiteness.
    pub fn new(a: DMatrix<f64>, r: Vec<DMatrix<f64>>) -> Result<Self> {
        let rank = a.ncols();
        if rank == 0 {
            return Err(RescalError::Dimension("rank must be >= 1".into()));
        }
        if let Some((k, bad)) = r.iter().enumerate().find(|(_, m)| m.shape() != (rank, rank)) {
            return Err(RescalError::Dimension(format!(
                "R_{k} has shape {:?}, expected ({rank}, {rank})",
                bad.shape()
            )));
        }
        let model = FactorModel { a, r };
        if !model.is_finite() {
            return Err(RescalError::Numerical("model contains non-finite entries".into()));
        }
        Ok(model)
    }

    pub(crate) fn from_parts_unchecked(a: DMatrix<f64>, r: Vec<DMatrix<f64>>) -> Self {
        FactorModel { a, r }
    }

    pub fn zeros(n: usize, k: usize, rank: usize) -> Self {
        FactorModel {
            a: DMatrix::zeros(n, rank),
            r: vec![DMatrix::zeros(rank, rank); k],
        }
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn r(&self) -> &[DMatrix<f64>] {
        &self.r
    }

    pub fn r_k(&self, k: usize) -> &DMatrix<f64> {
        &self.r[k]
    }

    pub fn n_entities(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_relations(&self) -> usize {
        self.r.len()
    }

    pub fn rank(&self) -> usize {
        self.a.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.a.iter().all(|v| v.is_finite()) && self.r.iter().all(|m| m.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn set_a(&mut self, a: DMatrix<f64>) {
        self.a = a;
    }

    pub(crate) fn set_r(&mut self, k: usize, r: DMatrix<f64>) {
        self.r[k] = r;
    }

    fn check_index(&self, i: usize, j: usize, k: usize) -> Result<()> {
        let n = self.n_entities();
        if i >= n || j >= n || k >= self.r.len() {
            return Err(RescalError::Index(format!(
                "({i}, {j}, {k}) outside model of N={n}, K={}",
                self.r.len()
            )));
        }
        Ok(())
    }

    /// Bilinear score `a_i^T R_k a_j`, evaluated as `(a_i^T R_k) . a_j`.
    pub fn score(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        self.check_index(i, j, k)?;
        Ok(self.score_unchecked(i, j, k))
    }

    fn score_unchecked(&self, i: usize, j: usize, k: usize) -> f64 {
        let rank = self.rank();
        let r = &self.r[k];
        let mut total = 0.0;
        for q in 0..rank {
            let mut left = 0.0;
            for p in 0..rank {
                left += self.a[(i, p)] * r[(p, q)];
            }
            total += left * self.a[(j, q)];
        }
        total
    }

    /// Dense `A R_k A^T` with each entry accumulated in the same order as [`score`](Self::score).
    pub fn score_slice(&self, k: usize, dense_cap: usize) -> Result<DMatrix<f64>> {
        let n = self.n_entities();
        if k >= self.r.len() {
            return Err(RescalError::Index(format!("relation {k} outside K={}", self.r.len())));
        }
        if n > dense_cap {
            return Err(RescalError::ResourceLimit { n, cap: dense_cap });
        }
        let rank = self.rank();
        let r = &self.r[k];
        let mut left = DMatrix::zeros(n, rank);
        for i in 0..n {
            for q in 0..rank {
                let mut acc = 0.0;
                for p in 0..rank {
                    acc += self.a[(i, p)] * r[(p, q)];
                }
                left[(i, q)] = acc;
            }
        }
        Ok(DMatrix::from_fn(n, n, |i, j| {
            let mut total = 0.0;
            for q in 0..rank {
                total += left[(i, q)] * self.a[(j, q)];
            }
            total
        }))
    }

    /// Bernoulli parameter `sigmoid(score)`, kept strictly inside `(0, 1)`.
    pub fn predict_proba(&self, i: usize, j: usize, k: usize) -> Result<f64> {
        self.score(i, j, k).map(numeric::probability)
    }
}

/// Draws the starting point for fitting on `tensor`.
///
/// `random` fills `A` then each `R_k` (row-major) with i.i.d.
/// `Normal(0, 0.1^2)` draws from a ChaCha8 stream seeded by `hp.seed`.
/// `nvecs` takes the `rank` leading eigenvectors of `sum_k (X_k + X_k^T)` as
/// the columns of `A` and solves each `R_k` exactly for that `A`.
pub fn init_model(tensor: &SparseAdjacencyTensor, hp: &Hyperparams) -> Result<FactorModel> {
    hp.validate()?;
    let n = tensor.n_entities();
    let k = tensor.n_relations();
    if n == 0 || k == 0 {
        return Err(RescalError::Config(format!(
            "cannot initialize a model for N={n}, K={k}"
        )));
    }
    match hp.init {
        Init::Random => Ok(random_model(n, k, hp.rank, hp.seed)),
        Init::Nvecs => {
            if hp.rank > n {
                return Err(RescalError::Config(format!(
                    "nvecs initialization needs rank <= N, got rank {} for N={n}",
                    hp.rank
                )));
            }
            let a = nvecs(tensor, hp.rank, hp.dense_cap)?;
            let mut model = FactorModel::from_parts_unchecked(a, vec![DMatrix::zeros(hp.rank, hp.rank); k]);
            let rs = crate::als::solve_all_r(tensor, model.a(), hp.lambda_r);
            for (idx, r) in rs.into_iter().enumerate() {
                model.set_r(idx, r);
            }
            Ok(model)
        }
    }
}

pub fn random_model(n: usize, k: usize, rank: usize, seed: u64) -> FactorModel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, RANDOM_INIT_SCALE).expect("valid normal");
    let a = DMatrix::from_row_iterator(n, rank, (0..n * rank).map(|_| normal.sample(&mut rng)));
    let r = (0..k)
        .map(|_| DMatrix::from_row_iterator(rank, rank, (0..rank * rank).map(|_| normal.sample(&mut rng))))
        .collect();
    FactorModel { a, r }
}

/// Leading `rank` eigenvectors of the symmetrized slice sum, ordered by
/// descending eigenvalue (ties keep the solver's order).
fn nvecs(tensor: &SparseAdjacencyTensor, rank: usize, dense_cap: usize) -> Result<DMatrix<f64>> {
    tensor.check_dense_cap(dense_cap)?;
    let n = tensor.n_entities();
    let mut s = DMatrix::<f64>::zeros(n, n);
    for slice in tensor.slices() {
        for &(i, j) in slice {
            s[(i, j)] += 1.0;
            s[(j, i)] += 1.0;
        }
    }
    let eig = SymmetricEigen::new(s);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let mut a = DMatrix::zeros(n, rank);
    for (col, &src) in order.iter().take(rank).enumerate() {
        a.set_column(col, &eig.eigenvectors.column(src));
    }
    Ok(a)
}
