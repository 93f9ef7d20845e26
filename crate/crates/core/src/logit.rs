//! Bernoulli (logistic) loss, its analytic gradient, and the L-BFGS fit.
//!
//! Each cell contributes `x softplus(-theta) + (1 - x) softplus(theta)` with
//! `theta = a_i^T R_k a_j`. With `E_k = sigmoid(A R_k A^T) - X_k` the
//! gradient is
//!
//! ```text
//! dA   = sum_k E_k A R_k^T + E_k^T A R_k + 2 lambda_A A
//! dR_k = A^T E_k A + 2 lambda_R R_k
//! ```

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::als::check_dims;
use crate::error::{RescalError, Result};
use crate::lbfgs::{lbfgs_minimize, LbfgsOptions};
use crate::model::{init_model, FactorModel, Hyperparams, Solver};
use crate::numeric::{sigmoid, softplus};
use crate::par;
use crate::tensor::SparseAdjacencyTensor;
use crate::trace::FitTrace;

/// `A` (row-major) followed by `R_0 .. R_{K-1}` (each row-major) in one vector.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatParams(pub DVector<f64>);

impl FlatParams {
    pub fn len_for(n: usize, k: usize, rank: usize) -> usize {
        n * rank + k * rank * rank
    }

    pub fn pack(model: &FactorModel) -> Self {
        let (n, rank) = model.a().shape();
        let mut out = Vec::with_capacity(Self::len_for(n, model.n_relations(), rank));
        push_row_major(&mut out, model.a());
        for r in model.r() {
            push_row_major(&mut out, r);
        }
        FlatParams(DVector::from_vec(out))
    }

    pub fn unpack(&self, n: usize, k: usize, rank: usize) -> Result<FactorModel> {
        if self.0.len() != Self::len_for(n, k, rank) {
            return Err(RescalError::Dimension(format!(
                "flat vector of length {} does not match N={n}, K={k}, rank={rank}",
                self.0.len()
            )));
        }
        Ok(self.unpack_unchecked(n, k, rank))
    }

    fn unpack_unchecked(&self, n: usize, k: usize, rank: usize) -> FactorModel {
        let v = self.0.as_slice();
        let a = DMatrix::from_row_slice(n, rank, &v[..n * rank]);
        let rr = rank * rank;
        let r = (0..k)
            .map(|idx| {
                let off = n * rank + idx * rr;
                DMatrix::from_row_slice(rank, rank, &v[off..off + rr])
            })
            .collect();
        FactorModel::from_parts_unchecked(a, r)
    }

    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice()
    }
}

fn push_row_major(out: &mut Vec<f64>, m: &DMatrix<f64>) {
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
}

fn check(tensor: &SparseAdjacencyTensor, model: &FactorModel, hp: &Hyperparams) -> Result<()> {
    check_dims(tensor, model)?;
    tensor.check_dense_cap(hp.dense_cap)
}

fn slice_loss(tensor: &SparseAdjacencyTensor, theta: &DMatrix<f64>, k: usize) -> f64 {
    let mut total: f64 = theta.iter().map(|&t| softplus(t)).sum();
    for &(i, j) in tensor.slice(k) {
        let t = theta[(i, j)];
        total += softplus(-t) - softplus(t);
    }
    total
}

fn penalty(model: &FactorModel, hp: &Hyperparams) -> f64 {
    let r: f64 = model.r().iter().map(|m| m.norm_squared()).sum();
    hp.lambda_a * model.a().norm_squared() + hp.lambda_r * r
}

/// Regularized Bernoulli negative log-likelihood over all `N^2 K` cells.
pub fn loss_logit(tensor: &SparseAdjacencyTensor, model: &FactorModel, hp: &Hyperparams) -> Result<f64> {
    check(tensor, model, hp)?;
    let a = model.a();
    let per_slice = par::map_range(tensor.n_relations(), |k| {
        let theta = a * model.r_k(k) * a.transpose();
        slice_loss(tensor, &theta, k)
    });
    Ok(per_slice.iter().sum::<f64>() + penalty(model, hp))
}

/// Analytic gradient of [`loss_logit`], packed like [`FlatParams`].
pub fn grad_logit(tensor: &SparseAdjacencyTensor, model: &FactorModel, hp: &Hyperparams) -> Result<FlatParams> {
    check(tensor, model, hp)?;
    Ok(loss_and_grad(tensor, model, hp).1)
}

/// Loss and gradient from a single pass over the slices.
pub fn loss_and_grad(tensor: &SparseAdjacencyTensor, model: &FactorModel, hp: &Hyperparams) -> (f64, FlatParams) {
    let a = model.a();
    let (n, rank) = a.shape();
    let per_slice = par::map_range(tensor.n_relations(), |k| {
        let r = model.r_k(k);
        let a_r = a * r;
        let a_rt = a * r.transpose();
        let theta = &a_r * a.transpose();
        let loss = slice_loss(tensor, &theta, k);
        // E_k = sigmoid(theta) - X_k, built once and shared by both partials
        let mut resid = theta.map(sigmoid);
        for &(i, j) in tensor.slice(k) {
            resid[(i, j)] -= 1.0;
        }
        let grad_a = &resid * a_rt + resid.transpose() * a_r;
        let grad_r = a.transpose() * &resid * a + r * (2.0 * hp.lambda_r);
        (loss, grad_a, grad_r)
    });

    let mut loss = penalty(model, hp);
    let mut grad_a = a * (2.0 * hp.lambda_a);
    for (l, ga, _) in &per_slice {
        loss += l;
        grad_a += ga;
    }
    let mut flat = Vec::with_capacity(FlatParams::len_for(n, per_slice.len(), rank));
    push_row_major(&mut flat, &grad_a);
    for (_, _, gr) in &per_slice {
        push_row_major(&mut flat, gr);
    }
    (loss, FlatParams(DVector::from_vec(flat)))
}

/// Optimizer settings implied by `hp`: the iteration cap and relative
/// objective tolerance come from `hp`, the rest are the defaults.
pub fn lbfgs_options(hp: &Hyperparams) -> LbfgsOptions {
    LbfgsOptions {
        max_iter: hp.max_iter,
        f_tol: hp.tol,
        ..LbfgsOptions::default()
    }
}

pub fn fit_logit(tensor: &SparseAdjacencyTensor, hp: &Hyperparams) -> Result<(FactorModel, FitTrace)> {
    fit_logit_with(tensor, hp, &lbfgs_options(hp))
}

/// Fits with explicit optimizer settings.
pub fn fit_logit_with(
    tensor: &SparseAdjacencyTensor,
    hp: &Hyperparams,
    opts: &LbfgsOptions,
) -> Result<(FactorModel, FitTrace)> {
    if hp.solver != Solver::Logit {
        return Err(RescalError::Config("fit_logit called with a non-logit solver setting".into()));
    }
    let start = Instant::now();
    let init = init_model(tensor, hp)?;
    check(tensor, &init, hp)?;
    let (n, k, rank) = (tensor.n_entities(), tensor.n_relations(), hp.rank);
    let objective = |x: &DVector<f64>| {
        let model = FlatParams(x.clone()).unpack_unchecked(n, k, rank);
        let (f, g) = loss_and_grad(tensor, &model, hp);
        (f, g.0)
    };
    let min = lbfgs_minimize(objective, FlatParams::pack(&init).0, opts)?;
    let model = FlatParams(min.x).unpack_unchecked(n, k, rank);
    let mut trace = min.trace;
    trace.wall_time = start.elapsed().as_secs_f64();
    if let Some(msg) = &trace.diagnostic {
        log::info!("logit fit stopped: {msg}");
    }
    if tensor.nnz() > 0 && max_abs_score(&model) < COLLAPSED_SCORE {
        // the origin is a local minimum whenever lambda > 0
        let msg = format!(
            "all scores below {COLLAPSED_SCORE:e}: the fit stayed at the zero model; \
             try init=nvecs or smaller lambdas (lambda_a = {}, lambda_r = {})",
            hp.lambda_a, hp.lambda_r
        );
        log::warn!("{msg}");
        trace.diagnostic = Some(match trace.diagnostic.take() {
            Some(prev) => format!("{prev}; {msg}"),
            None => msg,
        });
    }
    Ok((model, trace))
}

const COLLAPSED_SCORE: f64 = 1e-4;

fn max_abs_score(model: &FactorModel) -> f64 {
    let a = model.a();
    model
        .r()
        .iter()
        .map(|r| (a * r * a.transpose()).amax())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::random_model;
    use std::f64::consts::LN_2;

    #[test]
    fn loss_at_zero_scores_is_max_entropy() {
        let x = SparseAdjacencyTensor::from_slices(3, vec![vec![(0, 1)], vec![(2, 2), (1, 0)]]).unwrap();
        let hp = Hyperparams::logit(2).with_lambda(0.0, 0.0);
        let loss = loss_logit(&x, &FactorModel::zeros(3, 2, 2), &hp).unwrap();
        assert!((loss - 18.0 * LN_2).abs() < 1e-12);
    }

    #[test]
    fn loss_single_cell() {
        let x = SparseAdjacencyTensor::from_slices(1, vec![vec![(0, 0)]]).unwrap();
        let m = FactorModel::new(DMatrix::from_element(1, 1, 1.0), vec![DMatrix::from_element(1, 1, 2.0)]).unwrap();
        let hp = Hyperparams::logit(1).with_lambda(0.0, 0.0);
        assert!((loss_logit(&x, &m, &hp).unwrap() - 0.126_928_011_042_972_5).abs() < 1e-15);

        let empty = SparseAdjacencyTensor::zeros(1, 1);
        let loss = loss_logit(&empty, &FactorModel::zeros(1, 1, 1), &hp).unwrap();
        assert!((loss - LN_2).abs() < 1e-16);
    }

    #[test]
    fn loss_is_finite_for_huge_scores() {
        let x = SparseAdjacencyTensor::from_slices(1, vec![vec![(0, 0)]]).unwrap();
        let m = FactorModel::new(DMatrix::from_element(1, 1, 1.0), vec![DMatrix::from_element(1, 1, -1e4)]).unwrap();
        let hp = Hyperparams::logit(1).with_lambda(0.0, 0.0);
        assert_eq!(loss_logit(&x, &m, &hp).unwrap(), 1e4);
    }

    #[test]
    fn gradient_at_identity_with_zero_scores() {
        // theta = 0 everywhere and X = 0 gives E = J / 2, so dR = A^T (J/2) A = J/2 for A = I.
        let n = 3;
        let x = SparseAdjacencyTensor::zeros(n, 1);
        let m = FactorModel::new(DMatrix::identity(n, n), vec![DMatrix::zeros(n, n)]).unwrap();
        let hp = Hyperparams::logit(n).with_lambda(0.0, 0.0);
        let g = grad_logit(&x, &m, &hp).unwrap();
        let g_r = &g.as_slice()[n * n..];
        assert!(g_r.iter().all(|&v| v == 0.5));
        // dA = E A R^T + E^T A R = 0 because R = 0
        assert!(g.as_slice()[..n * n].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_factor_annihilates_gradient() {
        let x = SparseAdjacencyTensor::from_slices(3, vec![vec![(0, 1), (2, 0)]]).unwrap();
        let mut m = random_model(3, 1, 2, 5);
        m.set_a(DMatrix::zeros(3, 2));
        let hp = Hyperparams::logit(2).with_lambda(0.3, 0.0);
        let g = grad_logit(&x, &m, &hp).unwrap();
        assert!(g.as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pack_unpack_bijection() {
        let m = random_model(4, 3, 2, 9);
        let flat = FlatParams::pack(&m);
        assert_eq!(flat.0.len(), 4 * 2 + 3 * 4);
        assert_eq!(flat.unpack(4, 3, 2).unwrap(), m);
        assert!(flat.unpack(4, 2, 2).is_err());
        // row-major A first
        assert_eq!(flat.0[1], m.a()[(0, 1)]);
        assert_eq!(flat.0[8 + 1], m.r_k(0)[(0, 1)]);
    }

    #[test]
    fn single_positive_cell_is_learned() {
        // theta = a^2 r has a saddle at a = 0; starts with r < 0 slide into it,
        // so only starts with a positive initial score are checked.
        let x = SparseAdjacencyTensor::from_slices(1, vec![vec![(0, 0)]]).unwrap();
        let mut checked = 0;
        for seed in 0..20 {
            let hp = Hyperparams::logit(1).with_lambda(0.0, 0.0).with_max_iter(50).with_seed(seed);
            if init_model(&x, &hp).unwrap().score(0, 0, 0).unwrap() <= 0.0 {
                continue;
            }
            let (m, trace) = fit_logit(&x, &hp).unwrap();
            assert!(trace.iterations_run <= 50);
            assert!(m.predict_proba(0, 0, 0).unwrap() > 0.9, "seed {seed}: {trace:?}");
            checked += 1;
        }
        assert!(checked > 0);
    }

    #[test]
    fn fit_is_deterministic() {
        let x = SparseAdjacencyTensor::from_slices(4, vec![vec![(0, 1), (1, 2)], vec![(3, 3)]]).unwrap();
        let hp = Hyperparams::logit(2).with_lambda(0.1, 0.1).with_seed(4);
        let (m1, t1) = fit_logit(&x, &hp).unwrap();
        let (m2, t2) = fit_logit(&x, &hp).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(t1.objective, t2.objective);
    }

    #[test]
    fn fit_rejects_als_settings() {
        let x = SparseAdjacencyTensor::zeros(2, 1);
        assert!(matches!(fit_logit(&x, &Hyperparams::als(1)), Err(RescalError::Config(_))));
    }

    #[test]
    fn dense_cap_is_checked() {
        let x = SparseAdjacencyTensor::zeros(4, 1);
        let mut hp = Hyperparams::logit(1);
        hp.dense_cap = 3;
        let m = FactorModel::zeros(4, 1, 1);
        assert!(matches!(loss_logit(&x, &m, &hp), Err(RescalError::ResourceLimit { .. })));
        assert!(matches!(grad_logit(&x, &m, &hp), Err(RescalError::ResourceLimit { .. })));
    }
}
