use serde::{Deserialize, Serialize};

/// Convergence record of one fit.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitTrace {
    /// Objective at the starting point, when the solver evaluates it.
    pub initial_objective: Option<f64>,
    /// Objective after each completed iteration (ALS sweep or accepted L-BFGS step).
    pub objective: Vec<f64>,
    /// Seconds since the fit started, recorded alongside each objective value.
    pub seconds: Vec<f64>,
    pub iterations_run: usize,
    pub converged: bool,
    pub wall_time: f64,
    /// Why the fit stopped, when it stopped for a reason other than convergence.
    pub diagnostic: Option<String>,
}

impl FitTrace {
    pub fn record(&mut self, objective: f64, seconds: f64) {
        self.objective.push(objective);
        self.seconds.push(seconds);
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective.last().copied()
    }
}
