//! Least-squares fitting by alternating updates of `A` and the `R_k`.
//!
//! The `A` step solves the linearized normal equations
//!
//! ```text
//! A <- [sum_k X_k A R_k^T + X_k^T A R_k] [sum_k R_k A^T A R_k^T + R_k^T A^T A R_k + lambda_A I]^-1
//! ```
//!
//! with `A` on the right-hand side frozen at the previous iterate. The `R_k`
//! step is the exact ridge solution for `vec(R_k)` with design `A (x) A`,
//! evaluated through the thin SVD of `A` so the Kronecker product is never
//! formed.

use std::time::Instant;

use nalgebra::{DMatrix, SVD};

use crate::error::{RescalError, Result};
use crate::model::{init_model, FactorModel, Hyperparams, Solver};
use crate::par;
use crate::tensor::SparseAdjacencyTensor;
use crate::trace::FitTrace;

pub(crate) fn check_dims(tensor: &SparseAdjacencyTensor, model: &FactorModel) -> Result<()> {
    if tensor.n_entities() != model.n_entities() || tensor.n_relations() != model.n_relations() {
        return Err(RescalError::Dimension(format!(
            "tensor is {}x{}x{} but model has N={}, K={}",
            tensor.n_entities(),
            tensor.n_entities(),
            tensor.n_relations(),
            model.n_entities(),
            model.n_relations()
        )));
    }
    Ok(())
}

/// `sum_k ||X_k - A R_k A^T||_F^2 + lambda_A ||A||_F^2 + lambda_R sum_k ||R_k||_F^2`.
pub fn objective_als(tensor: &SparseAdjacencyTensor, model: &FactorModel, hp: &Hyperparams) -> Result<f64> {
    check_dims(tensor, model)?;
    tensor.check_dense_cap(hp.dense_cap)?;
    let a = model.a();
    let per_slice = par::map_range(tensor.n_relations(), |k| {
        let mut resid = a * model.r_k(k) * a.transpose();
        for &(i, j) in tensor.slice(k) {
            resid[(i, j)] -= 1.0;
        }
        resid.norm_squared()
    });
    let loss: f64 = per_slice.iter().sum();
    let penalty_r: f64 = model.r().iter().map(|r| r.norm_squared()).sum();
    Ok(loss + hp.lambda_a * a.norm_squared() + hp.lambda_r * penalty_r)
}

/// One `A` step with every `R_k` fixed.
pub fn update_a(tensor: &SparseAdjacencyTensor, model: &FactorModel, hp: &Hyperparams) -> Result<DMatrix<f64>> {
    check_dims(tensor, model)?;
    let a = model.a();
    let (n, rank) = a.shape();
    let ata = a.transpose() * a;

    let terms = par::map_range(tensor.n_relations(), |k| {
        let r = model.r_k(k);
        let a_rt = a * r.transpose();
        let a_r = a * r;
        let mut rhs = DMatrix::zeros(n, rank);
        for &(i, j) in tensor.slice(k) {
            // X_k A R_k^T puts row j of A R_k^T into row i;
            // X_k^T A R_k puts row i of A R_k into row j.
            for c in 0..rank {
                rhs[(i, c)] += a_rt[(j, c)];
                rhs[(j, c)] += a_r[(i, c)];
            }
        }
        let gram = r * &ata * r.transpose() + r.transpose() * &ata * r;
        (rhs, gram)
    });

    let mut rhs = DMatrix::zeros(n, rank);
    let mut gram = DMatrix::identity(rank, rank) * hp.lambda_a;
    for (f, e) in &terms {
        rhs += f;
        gram += e;
    }
    let chol = gram.cholesky().ok_or_else(|| {
        RescalError::Numerical(format!(
            "A-update system is not positive definite (lambda_a = {}); use lambda_a > 0",
            hp.lambda_a
        ))
    })?;
    // A E = F with E symmetric  <=>  E A^T = F^T
    let a_new = chol.solve(&rhs.transpose()).transpose();
    if a_new.iter().any(|v| !v.is_finite()) {
        return Err(RescalError::Numerical(format!(
            "A-update produced non-finite values (lambda_a = {}); use lambda_a > 0",
            hp.lambda_a
        )));
    }
    Ok(a_new)
}

/// Exact ridge minimizer of `||X_k - A R_k A^T||^2 + lambda_R ||R_k||^2` for fixed `A`.
pub fn update_r(tensor: &SparseAdjacencyTensor, model: &FactorModel, hp: &Hyperparams, k: usize) -> Result<DMatrix<f64>> {
    check_dims(tensor, model)?;
    if k >= tensor.n_relations() {
        return Err(RescalError::Index(format!("relation {k} outside K={}", tensor.n_relations())));
    }
    let basis = RidgeBasis::new(model.a(), hp.lambda_r);
    Ok(basis.solve(tensor.slice(k)))
}

/// [`update_r`] for every relation, sharing one SVD of `A`.
pub fn solve_all_r(tensor: &SparseAdjacencyTensor, a: &DMatrix<f64>, lambda_r: f64) -> Vec<DMatrix<f64>> {
    let basis = RidgeBasis::new(a, lambda_r);
    par::map_range(tensor.n_relations(), |k| basis.solve(tensor.slice(k)))
}

/// Thin SVD `A = U S V^T` with the ridge shrinkage weights
/// `s_p s_q / (s_p^2 s_q^2 + lambda)` precomputed.
struct RidgeBasis {
    u: DMatrix<f64>,
    v: DMatrix<f64>,
    shrink: DMatrix<f64>,
}

impl RidgeBasis {
    fn new(a: &DMatrix<f64>, lambda: f64) -> Self {
        let svd = SVD::new(a.clone(), true, true);
        let u = svd.u.expect("u requested");
        let v = svd.v_t.expect("v_t requested").transpose();
        let s = svd.singular_values;
        let m = s.len();
        let s_max = s.iter().copied().fold(0.0_f64, f64::max);
        // singular-value products below this count as zero when lambda = 0
        let cutoff = (a.nrows().max(a.ncols()) as f64) * f64::EPSILON * s_max * s_max;
        let shrink = DMatrix::from_fn(m, m, |p, q| {
            let d = s[p] * s[q];
            if lambda > 0.0 {
                d / (d * d + lambda)
            } else if d > cutoff {
                1.0 / d
            } else {
                0.0
            }
        });
        RidgeBasis { u, v, shrink }
    }

    fn solve(&self, coords: &[(usize, usize)]) -> DMatrix<f64> {
        let m = self.u.ncols();
        // X_k U, accumulated from the stored coordinates
        let mut xu = DMatrix::zeros(self.u.nrows(), m);
        for &(i, j) in coords {
            for c in 0..m {
                xu[(i, c)] += self.u[(j, c)];
            }
        }
        let core = (self.u.transpose() * xu).component_mul(&self.shrink);
        &self.v * core * self.v.transpose()
    }
}

/// Fits by alternating `A` and `R` updates until the relative objective
/// change `|f_t - f_{t-1}| / max(1, f_{t-1})` falls below `hp.tol`.
pub fn fit_als(tensor: &SparseAdjacencyTensor, hp: &Hyperparams) -> Result<(FactorModel, FitTrace)> {
    if hp.solver != Solver::Als {
        return Err(RescalError::Config("fit_als called with a non-ALS solver setting".into()));
    }
    let start = Instant::now();
    let mut model = init_model(tensor, hp)?;
    let mut previous = objective_als(tensor, &model, hp)?;
    let mut trace = FitTrace {
        initial_objective: Some(previous),
        ..FitTrace::default()
    };

    for iter in 1..=hp.max_iter {
        let a = update_a(tensor, &model, hp)?;
        model.set_a(a);
        for (k, r) in solve_all_r(tensor, model.a(), hp.lambda_r).into_iter().enumerate() {
            model.set_r(k, r);
        }
        let current = objective_als(tensor, &model, hp)?;
        if !current.is_finite() {
            return Err(RescalError::Numerical(format!("objective became {current} at sweep {iter}")));
        }
        trace.record(current, start.elapsed().as_secs_f64());
        trace.iterations_run = iter;
        let change = (previous - current).abs() / previous.max(1.0);
        log::debug!("als sweep {iter}: objective {current:.6e} (change {change:.3e})");
        if change < hp.tol {
            trace.converged = true;
            break;
        }
        previous = current;
    }
    if !trace.converged {
        trace.diagnostic = Some(format!("max_iter = {} reached", hp.max_iter));
    }
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok((model, trace))
}
