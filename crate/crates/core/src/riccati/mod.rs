//! Discretized path-dependent Riccati equation.
//!
//! The bilinear functional `P(s_k)` acting on paths over `[s_k, T]` is
//! represented by a symmetric matrix `P_k` acting on grid paths, with value
//! function `V_k(χ) = ½ χᵀ P_k χ`. Two solvers are provided: backward
//! dynamic programming ([`solve_dp`]) and policy iteration
//! ([`picard_solve`]).

mod dp;
mod io;
mod lifted;
mod norms;
mod picard;

pub use dp::solve_dp;
pub use io::{read_solution, write_solution, SOLUTION_FORMAT_VERSION};
pub use lifted::{build_lifted, LiftedStep, LiftedSystem};
pub use norms::{bilinear_norms, BilinearNorms, MAX_ENUMERATION_DIM};
pub use picard::{lyapunov_step, picard_solve, PicardIterate, PicardTrace};

use crate::error::{Error, Result};
use crate::grid::{DiscretePath, TimeGrid};
use crate::linalg::{max_abs, Mat, Vector};

#[derive(Clone, Debug, PartialEq)]
pub struct RiccatiSolution {
    pub n: usize,
    pub m: usize,
    pub grid: TimeGrid,
    /// `P_k` for `k = 0..=N`, of size `(N−k+1)n`; `P_N = G`.
    pub p: Vec<Mat>,
    /// Feedback `Θ_k` for `k < N`, of shape `m × (N−k+1)n`.
    pub theta: Vec<Mat>,
    /// `min_k λ_min(R̂_k) / h`.
    pub regularity_margin: f64,
}

impl RiccatiSolution {
    pub fn dim(&self, k: usize) -> usize {
        (self.grid.steps - k + 1) * self.n
    }

    /// Largest entry of `Θ_k` outside the leading `n` columns, over all `k`.
    /// Zero when the feedback only reads the current state.
    pub fn non_markovian_gain(&self) -> f64 {
        self.theta
            .iter()
            .map(|t| {
                let cols = t.ncols() - self.n;
                max_abs(&t.columns(self.n, cols).into_owned())
            })
            .fold(0.0, f64::max)
    }

    fn check_path(&self, k: usize, chi: &DiscretePath) -> Result<()> {
        if k > self.grid.steps {
            return Err(Error::Argument(format!(
                "step {k} beyond horizon {}",
                self.grid.steps
            )));
        }
        if chi.start != k || chi.values.len() != self.dim(k) {
            return Err(Error::Shape(format!(
                "path starts at {} with length {}, expected start {k} and length {}",
                chi.start,
                chi.values.len(),
                self.dim(k)
            )));
        }
        Ok(())
    }
}

/// Causal feedback `u_k = Θ_k χ_k`.
pub fn feedback_control(sol: &RiccatiSolution, k: usize, chi: &DiscretePath) -> Result<Vector> {
    sol.check_path(k, chi)?;
    if k == sol.grid.steps {
        return Err(Error::Argument(
            "no control is applied at the terminal node".into(),
        ));
    }
    Ok(&sol.theta[k] * &chi.values)
}

/// `½ χᵀ P_k χ`.
pub fn value_at(sol: &RiccatiSolution, k: usize, chi: &DiscretePath) -> Result<f64> {
    sol.check_path(k, chi)?;
    Ok(0.5 * chi.values.dot(&(&sol.p[k] * &chi.values)))
}
