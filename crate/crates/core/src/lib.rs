//! RESCAL bilinear tensor factorization for multi-relational data.
//!
//! A dataset of `K` binary relations over `N` entities is an `N x N x K`
//! adjacency tensor `X`. Each frontal slice is modelled as
//! `X_k ~ A R_k A^T`, where row `a_i` of `A` is the latent vector of entity
//! `i` and `R_k` is a full `r x r` interaction matrix for relation `k`.
//!
//! Two fitting routes are provided:
//!
//! * [`als::fit_als`] minimizes the ridge-penalized squared error with
//!   alternating closed-form updates.
//! * [`logit::fit_logit`] minimizes the ridge-penalized Bernoulli negative
//!   log-likelihood with L-BFGS ([`lbfgs::lbfgs_minimize`]).
//!
//! [`eval`] implements fold construction, masked retraining and AUC-PR, and
//! [`run`] ties everything to files on disk for the command-line front end.
//!
//! Per-relation work and cross-validation folds run on rayon when the
//! `parallel` feature (on by default) is enabled; results are always reduced
//! in relation/fold order, so fits are bit-identical for any thread count.

// `!(x >= 0.0)` is used on purpose so NaN fails the same checks.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod als;
pub mod error;
pub mod eval;
pub mod io;
pub mod lbfgs;
pub mod logit;
pub mod model;
pub mod numeric;
pub mod par;
pub mod run;
pub mod tensor;
pub mod trace;

pub use error::{RescalError, Result};
pub use eval::{auc_pr, make_kfold, make_targeted_folds, run_cv, EvaluationReport, FoldPlan};
pub use model::{init_model, FactorModel, Hyperparams, Init, Solver};
pub use tensor::{from_triples, Cell, Dictionary, SparseAdjacencyTensor, Triple};
pub use trace::FitTrace;
