//! Policy (Picard) iteration: alternate a Lyapunov solve for the cost of a
//! fixed feedback with a greedy feedback update. Under the standard
//! condition the kernels decrease monotonically to the Riccati solution.

use serde::Serialize;

use super::dp::{add_running_state_cost, factor_gain, step_quadratic};
use super::lifted::LiftedSystem;
use super::RiccatiSolution;
use crate::error::{Error, Result};
use crate::grid::SampledCoefficients;
use crate::linalg::{min_eigenvalue, sym_spectral_norm, symmetrize, Mat};

#[derive(Clone, Debug, Serialize)]
pub struct PicardIterate {
    #[serde(skip)]
    pub p: Vec<Mat>,
    #[serde(skip)]
    pub psi: Vec<Mat>,
    /// `max_k ‖P⁽ⁱ⁾_k − P⁽ⁱ⁻¹⁾_k‖₂`; infinite for the initial iterate.
    pub residual: f64,
    /// `min_k λ_min(P⁽ⁱ⁻¹⁾_k − P⁽ⁱ⁾_k)`; infinite for the initial iterate.
    pub monotonicity_margin: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PicardTrace {
    pub iterates: Vec<PicardIterate>,
}

impl PicardTrace {
    /// Number of feedback updates performed.
    pub fn iterations(&self) -> usize {
        self.iterates.len().saturating_sub(1)
    }

    pub fn final_residual(&self) -> f64 {
        self.iterates.last().map_or(f64::INFINITY, |it| it.residual)
    }

    pub fn min_monotonicity_margin(&self) -> f64 {
        self.iterates
            .iter()
            .map(|it| it.monotonicity_margin)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn residuals(&self) -> Vec<f64> {
        self.iterates.iter().skip(1).map(|it| it.residual).collect()
    }
}

fn check_feedback_shapes(lifted: &LiftedSystem, psi: &[Mat]) -> Result<()> {
    if psi.len() != lifted.grid.steps {
        return Err(Error::Shape(format!(
            "feedback sequence has {} entries, expected {}",
            psi.len(),
            lifted.grid.steps
        )));
    }
    for (k, g) in psi.iter().enumerate() {
        if g.shape() != (lifted.m, lifted.dim(k)) {
            return Err(Error::Shape(format!(
                "feedback at step {k} is {}x{}, expected {}x{}",
                g.nrows(),
                g.ncols(),
                lifted.m,
                lifted.dim(k)
            )));
        }
    }
    Ok(())
}

/// Cost kernels of the closed loop `u_k = −Ψ_k χ_k`:
///
/// ```text
/// P_k = h EᵀQE + h ΨᵀRΨ + (F − GuΨ)ᵀ P_{k+1} (F − GuΨ) + h (H − LΨ)ᵀ P_{k+1} (H − LΨ)
/// ```
pub fn lyapunov_step(
    lifted: &LiftedSystem,
    coeffs: &SampledCoefficients,
    psi: &[Mat],
) -> Result<Vec<Mat>> {
    check_feedback_shapes(lifted, psi)?;
    let steps = lifted.grid.steps;
    let h = lifted.grid.h();
    let mut p = vec![Mat::zeros(0, 0); steps + 1];
    p[steps] = coeffs.g.clone();
    for k in (0..steps).rev() {
        let step = &lifted.steps[k];
        let drift = &step.f - &step.gu * &psi[k];
        let noise = &step.h - &step.l * &psi[k];
        let next = &p[k + 1];
        let mut pk = drift.transpose() * next * &drift
            + noise.transpose() * next * &noise * h
            + psi[k].transpose() * &coeffs.r[k] * &psi[k] * h;
        add_running_state_cost(&mut pk, &coeffs.q[k], h);
        symmetrize(&mut pk);
        p[k] = pk;
    }
    Ok(p)
}

/// Greedy feedback `Ψ_k = R̂_k⁻¹ S_k` with respect to the kernels `p`.
fn greedy_feedback(
    lifted: &LiftedSystem,
    coeffs: &SampledCoefficients,
    p: &[Mat],
) -> Result<(Vec<Mat>, f64)> {
    let h = lifted.grid.h();
    let mut margin = f64::INFINITY;
    let psi = (0..lifted.grid.steps)
        .map(|k| {
            let sq = step_quadratic(&lifted.steps[k], &coeffs.r[k], h, &p[k + 1]);
            let (chol, eig) = factor_gain(&sq.r_hat, k, lifted.grid.node(k))?;
            margin = margin.min(eig / h);
            Ok(chol.solve(&sq.s))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((psi, margin))
}

/// Solves the discrete Riccati equation by policy iteration starting from
/// the zero feedback. Stops once successive kernels differ by at most `tol`
/// in spectral norm.
pub fn picard_solve(
    lifted: &LiftedSystem,
    coeffs: &SampledCoefficients,
    tol: f64,
    max_iter: usize,
) -> Result<(RiccatiSolution, PicardTrace)> {
    if !(tol >= 0.0) {
        return Err(Error::Argument(format!(
            "tolerance must be non-negative, got {tol}"
        )));
    }
    let steps = lifted.grid.steps;
    let zero: Vec<Mat> = (0..steps)
        .map(|k| Mat::zeros(lifted.m, lifted.dim(k)))
        .collect();
    let p0 = lyapunov_step(lifted, coeffs, &zero)?;
    let mut trace = PicardTrace {
        iterates: vec![PicardIterate {
            p: p0,
            psi: zero,
            residual: f64::INFINITY,
            monotonicity_margin: f64::INFINITY,
        }],
    };

    for _ in 0..max_iter {
        let prev = &trace.iterates.last().expect("initial iterate").p;
        let (psi, _) = greedy_feedback(lifted, coeffs, prev)?;
        let p = lyapunov_step(lifted, coeffs, &psi)?;
        let mut residual = 0.0_f64;
        let mut margin = f64::INFINITY;
        for (old, new) in prev.iter().zip(&p) {
            let diff = old - new;
            residual = residual.max(sym_spectral_norm(&diff));
            margin = margin.min(min_eigenvalue(&diff));
        }
        trace.iterates.push(PicardIterate {
            p,
            psi,
            residual,
            monotonicity_margin: margin,
        });
        if residual <= tol {
            let p = trace.iterates.last().expect("just pushed").p.clone();
            let (psi, margin) = greedy_feedback(lifted, coeffs, &p)?;
            let solution = RiccatiSolution {
                n: lifted.n,
                m: lifted.m,
                grid: lifted.grid,
                p,
                theta: psi.into_iter().map(|g| -g).collect(),
                regularity_margin: margin,
            };
            return Ok((solution, trace));
        }
    }
    Err(Error::Convergence {
        iterations: trace.iterations(),
        residual: trace.final_residual(),
        trace: trace.residuals(),
    })
}
