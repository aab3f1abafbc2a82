//! Linear conic programs over products of PSD and nonnegative cones, and a
//! primal-dual interior-point solver for them.
//!
//! A [`ConicProblem`] is stated in maximization form:
//!
//! ```text
//! maximize    objective(x)
//! subject to  row(x) = rhs          for every equality row
//!             F_j(x) PSD            for every matrix block
//!             x_k >= 0              for every listed scalar
//! ```

mod cone;
mod ipm;
mod presolve;
pub mod sdpa;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::moments::{LinearFunctional, LinearMatrixForm, LinearRow};

pub use ipm::solve;

#[derive(Clone, Debug, PartialEq)]
pub struct ConicProblem {
    pub num_vars: usize,
    pub objective: LinearFunctional,
    pub equalities: Vec<LinearRow>,
    pub psd_blocks: Vec<LinearMatrixForm>,
    pub nonneg: Vec<usize>,
}

impl ConicProblem {
    pub fn new(num_vars: usize, objective: LinearFunctional) -> Self {
        ConicProblem {
            num_vars,
            objective,
            equalities: Vec::new(),
            psd_blocks: Vec::new(),
            nonneg: Vec::new(),
        }
    }

    pub fn num_psd_rows(&self) -> usize {
        self.psd_blocks.iter().map(|b| b.side).sum()
    }

    /// Largest violation of the constraints at `x`: equality residual,
    /// negative eigenvalue, or negative scalar.
    pub fn violation(&self, x: &[f64]) -> f64 {
        let eq = self.equalities.iter().map(|r| r.residual(x).abs()).fold(0.0, f64::max);
        let psd = self
            .psd_blocks
            .iter()
            .map(|b| {
                let m = b.instantiate(x);
                (-m.symmetric_eigenvalues().min()).max(0.0)
            })
            .fold(0.0, f64::max);
        let nn = self.nonneg.iter().map(|&k| (-x[k]).max(0.0)).fold(0.0, f64::max);
        eq.max(psd).max(nn)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverStatus {
    Optimal,
    /// Iteration limit reached; `ConicSolution::loose` tells whether the
    /// iterate meets the loosened tolerances.
    MaxIterations,
    Infeasible,
    Unbounded,
    NumericalFailure,
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::MaxIterations => "max_iterations",
            SolverStatus::Infeasible => "infeasible",
            SolverStatus::Unbounded => "unbounded",
            SolverStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
    /// Factor applied to both tolerances when the iteration limit is hit.
    pub loosen: f64,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            feas_tol: 1e-8,
            gap_tol: 1e-8,
            max_iter: 200,
            loosen: 1e4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    pub primal: f64,
    pub dual: f64,
    pub gap: f64,
}

#[derive(Clone, Debug)]
pub struct ConicSolution {
    pub status: SolverStatus,
    /// Iteration limit hit but loosened tolerances met.
    pub loose: bool,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub x: Vec<f64>,
    /// Multipliers of the equality rows; the dual objective is
    /// `sum rhs_i y_i + sum <F_j(0), Z_j> + objective constant`.
    pub equality_duals: Vec<f64>,
    pub psd_duals: Vec<DMatrix<f64>>,
    pub nonneg_duals: Vec<f64>,
    pub residuals: Residuals,
    pub iterations: usize,
}

impl ConicSolution {
    /// Statuses whose primal and dual values may be decoded.
    pub fn is_usable(&self) -> bool {
        self.status == SolverStatus::Optimal || (self.status == SolverStatus::MaxIterations && self.loose)
    }

    pub(crate) fn failed(status: SolverStatus, num_vars: usize, iterations: usize) -> Self {
        ConicSolution {
            status,
            loose: false,
            primal_objective: f64::NAN,
            dual_objective: f64::NAN,
            x: vec![f64::NAN; num_vars],
            equality_duals: Vec::new(),
            psd_duals: Vec::new(),
            nonneg_duals: Vec::new(),
            residuals: Residuals::default(),
            iterations,
        }
    }
}
