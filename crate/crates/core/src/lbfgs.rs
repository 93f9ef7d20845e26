//! Limited-memory BFGS with a strong-Wolfe line search.
//!
//! Search directions come from the two-loop recursion over the last `memory`
//! step/gradient-change pairs, with the initial inverse Hessian scaled by
//! `s^T y / y^T y`. Step lengths come from the bracketing and zoom phases of
//! Nocedal & Wright (Algorithms 3.5 and 3.6) using safeguarded cubic
//! interpolation.

use std::collections::VecDeque;
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{RescalError, Result};
use crate::trace::FitTrace;

#[derive(Debug, Clone, PartialEq)]
pub struct LbfgsOptions {
    /// Number of stored correction pairs.
    pub memory: usize,
    pub max_iter: usize,
    /// Stop once `max_i |g_i|` falls below this.
    pub grad_tol: f64,
    /// Stop once `|f_t - f_{t-1}| / max(1, |f_{t-1}|)` falls below this. Zero disables it.
    pub f_tol: f64,
    /// Sufficient-decrease constant.
    pub c1: f64,
    /// Curvature constant.
    pub c2: f64,
    /// Function evaluations allowed per line search.
    pub max_line_search: usize,
}

impl Default for LbfgsOptions {
    fn default() -> Self {
        LbfgsOptions {
            memory: 10,
            max_iter: 500,
            grad_tol: 1e-5,
            f_tol: 1e-5,
            c1: 1e-4,
            c2: 0.9,
            max_line_search: 25,
        }
    }
}

impl LbfgsOptions {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.c1 && self.c1 < self.c2 && self.c2 < 1.0) {
            return Err(RescalError::Config(format!(
                "line-search constants must satisfy 0 < c1 < c2 < 1, got c1={}, c2={}",
                self.c1, self.c2
            )));
        }
        if self.memory < 1 {
            return Err(RescalError::Config("L-BFGS memory must be >= 1".into()));
        }
        if self.max_line_search < 1 {
            return Err(RescalError::Config("max_line_search must be >= 1".into()));
        }
        if !(self.grad_tol >= 0.0) || !(self.f_tol >= 0.0) {
            return Err(RescalError::Config("tolerances must be >= 0".into()));
        }
        Ok(())
    }
}

/// Outcome of a minimization.
#[derive(Debug, Clone)]
pub struct Minimum {
    pub x: DVector<f64>,
    pub value: f64,
    pub gradient: DVector<f64>,
    pub trace: FitTrace,
}

struct Point {
    x: DVector<f64>,
    f: f64,
    g: DVector<f64>,
}

struct Probe {
    alpha: f64,
    f: f64,
    slope: f64,
}

struct Correction {
    s: DVector<f64>,
    y: DVector<f64>,
    rho: f64,
}

fn max_abs(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

/// Minimizes `objective`, which returns the value and gradient at a point.
///
/// Every accepted step lowers the objective strictly. A line search that
/// cannot find an acceptable step ends the run with `converged = false` and
/// the last accepted iterate. A non-finite value at an accepted point aborts.
pub fn lbfgs_minimize<F>(mut objective: F, x0: DVector<f64>, opts: &LbfgsOptions) -> Result<Minimum>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    opts.validate()?;
    let start = Instant::now();
    let (f0, g0) = objective(&x0);
    if !f0.is_finite() || g0.iter().any(|v| !v.is_finite()) {
        return Err(RescalError::NonFinite {
            iteration: 0,
            value: f0,
            x_norm: x0.norm(),
            grad_norm: max_abs(&g0),
        });
    }
    let mut current = Point { x: x0, f: f0, g: g0 };
    let mut trace = FitTrace {
        initial_objective: Some(f0),
        ..FitTrace::default()
    };
    let mut history: VecDeque<Correction> = VecDeque::with_capacity(opts.memory);

    if max_abs(&current.g) < opts.grad_tol {
        trace.converged = true;
        trace.wall_time = start.elapsed().as_secs_f64();
        return Ok(finish(current, trace));
    }

    let mut iter = 0;
    while iter < opts.max_iter {
        let mut direction = two_loop(&current.g, &history);
        let mut slope = current.g.dot(&direction);
        if !(slope < 0.0) {
            history.clear();
            direction = -&current.g;
            slope = current.g.dot(&direction);
        }
        let initial_step = if history.is_empty() {
            (1.0 / max_abs(&current.g)).min(1.0)
        } else {
            1.0
        };

        let next = match line_search(&mut objective, &current, &direction, slope, initial_step, opts) {
            Some(p) => p,
            None if !history.is_empty() => {
                // retry once along steepest descent before giving up
                history.clear();
                let sd = -&current.g;
                let sd_slope = current.g.dot(&sd);
                match line_search(&mut objective, &current, &sd, sd_slope, (1.0 / max_abs(&current.g)).min(1.0), opts)
                {
                    Some(p) => p,
                    None => {
                        trace.diagnostic = Some(format!("line search failed at iteration {}", iter + 1));
                        break;
                    }
                }
            }
            None => {
                trace.diagnostic = Some(format!("line search failed at iteration {}", iter + 1));
                break;
            }
        };

        if !next.f.is_finite() || next.g.iter().any(|v| !v.is_finite()) {
            return Err(RescalError::NonFinite {
                iteration: iter + 1,
                value: next.f,
                x_norm: next.x.norm(),
                grad_norm: max_abs(&next.g),
            });
        }
        if !(next.f < current.f) {
            trace.diagnostic = Some(format!("no further decrease at iteration {}", iter + 1));
            break;
        }

        iter += 1;
        let s = &next.x - &current.x;
        let y = &next.g - &current.g;
        let sy = s.dot(&y);
        if sy > f64::EPSILON * y.norm_squared() {
            if history.len() == opts.memory {
                history.pop_front();
            }
            history.push_back(Correction { s, y, rho: 1.0 / sy });
        }

        let change = (current.f - next.f).abs() / current.f.abs().max(1.0);
        current = next;
        trace.record(current.f, start.elapsed().as_secs_f64());
        trace.iterations_run = iter;

        let gnorm = max_abs(&current.g);
        log::trace!("lbfgs iter {iter}: f = {:.10e}, |g|_inf = {gnorm:.3e}", current.f);
        if gnorm < opts.grad_tol || change < opts.f_tol {
            trace.converged = true;
            break;
        }
    }
    if !trace.converged && trace.diagnostic.is_none() {
        trace.diagnostic = Some(format!("max_iter = {} reached", opts.max_iter));
    }
    trace.wall_time = start.elapsed().as_secs_f64();
    Ok(finish(current, trace))
}

fn finish(point: Point, trace: FitTrace) -> Minimum {
    Minimum {
        x: point.x,
        value: point.f,
        gradient: point.g,
        trace,
    }
}

/// Returns `-H g` for the inverse-Hessian approximation held in `history`.
fn two_loop(g: &DVector<f64>, history: &VecDeque<Correction>) -> DVector<f64> {
    let mut q = g.clone();
    let mut alphas = Vec::with_capacity(history.len());
    for c in history.iter().rev() {
        let alpha = c.rho * c.s.dot(&q);
        q.axpy(-alpha, &c.y, 1.0);
        alphas.push(alpha);
    }
    if let Some(last) = history.back() {
        let gamma = last.s.dot(&last.y) / last.y.norm_squared();
        q *= gamma;
    }
    for (c, alpha) in history.iter().zip(alphas.into_iter().rev()) {
        let beta = c.rho * c.y.dot(&q);
        q.axpy(alpha - beta, &c.s, 1.0);
    }
    -q
}

/// Minimizer of the cubic through two points with known slopes, or `None`
/// when the interpolant has no usable minimizer.
fn cubic_min(a: &Probe, b: &Probe) -> Option<f64> {
    let d1 = a.slope + b.slope - 3.0 * (a.f - b.f) / (a.alpha - b.alpha);
    let disc = d1 * d1 - a.slope * b.slope;
    if !(disc >= 0.0) {
        return None;
    }
    let d2 = (b.alpha - a.alpha).signum() * disc.sqrt();
    let denom = b.slope - a.slope + 2.0 * d2;
    if denom == 0.0 {
        return None;
    }
    let t = b.alpha - (b.alpha - a.alpha) * (b.slope + d2 - d1) / denom;
    t.is_finite().then_some(t)
}

fn line_search<F>(
    objective: &mut F,
    start: &Point,
    direction: &DVector<f64>,
    slope0: f64,
    initial_step: f64,
    opts: &LbfgsOptions,
) -> Option<Point>
where
    F: FnMut(&DVector<f64>) -> (f64, DVector<f64>),
{
    let f0 = start.f;
    let mut evals = 0;
    let mut eval = |alpha: f64, evals: &mut usize| -> (Probe, Point) {
        *evals += 1;
        let x = &start.x + direction * alpha;
        let (f, g) = objective(&x);
        let slope = g.dot(direction);
        (Probe { alpha, f, slope }, Point { x, f, g })
    };
    let armijo = |p: &Probe| p.f.is_finite() && p.f <= f0 + opts.c1 * p.alpha * slope0;
    let curvature = |p: &Probe| p.slope.abs() <= -opts.c2 * slope0;

    let mut prev = Probe {
        alpha: 0.0,
        f: f0,
        slope: slope0,
    };
    let mut prev_point: Option<Point> = None;
    let mut alpha = initial_step;

    // bracketing phase
    let (mut lo, mut lo_point, mut hi) = loop {
        if evals >= opts.max_line_search {
            return prev_point;
        }
        let (probe, point) = eval(alpha, &mut evals);
        if !armijo(&probe) || (evals > 1 && probe.f >= prev.f) {
            break (prev, prev_point, probe);
        }
        if curvature(&probe) {
            return Some(point);
        }
        if probe.slope >= 0.0 {
            break (probe, Some(point), prev);
        }
        alpha = probe.alpha * 2.0;
        prev = probe;
        prev_point = Some(point);
    };

    // zoom phase
    while evals < opts.max_line_search {
        let width = hi.alpha - lo.alpha;
        let lower = lo.alpha.min(hi.alpha) + 0.1 * width.abs();
        let upper = lo.alpha.max(hi.alpha) - 0.1 * width.abs();
        let trial = if hi.f.is_finite() && hi.slope.is_finite() {
            cubic_min(&lo, &hi).filter(|t| *t >= lower && *t <= upper)
        } else {
            None
        }
        .unwrap_or(0.5 * (lo.alpha + hi.alpha));
        if (hi.alpha - lo.alpha).abs() < f64::EPSILON * lo.alpha.abs().max(1.0) {
            break;
        }
        let (probe, point) = eval(trial, &mut evals);
        if !armijo(&probe) || probe.f >= lo.f {
            hi = probe;
        } else {
            if curvature(&probe) {
                return Some(point);
            }
            if probe.slope * (hi.alpha - lo.alpha) >= 0.0 {
                hi = lo;
            }
            lo = probe;
            lo_point = Some(point);
        }
    }
    // budget exhausted: fall back to the best sufficient-decrease point, if any
    lo_point
}
