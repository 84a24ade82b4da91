use nalgebra::Cholesky;

use super::lifted::{LiftedStep, LiftedSystem};
use super::RiccatiSolution;
use crate::error::{Error, Result};
use crate::grid::SampledCoefficients;
use crate::linalg::{min_eigenvalue, symmetrize, Mat};

/// The control-dependent part of the one-step Bellman problem at `k`:
/// `uᵀ R̂ u + 2 uᵀ S χ`.
pub(crate) struct StepQuadratic {
    pub r_hat: Mat,
    pub s: Mat,
    /// `P_{k+1} F`
    pub pf: Mat,
    /// `P_{k+1} H`
    pub ph: Mat,
}

pub(crate) fn step_quadratic(step: &LiftedStep, r: &Mat, h: f64, p_next: &Mat) -> StepQuadratic {
    let pf = p_next * &step.f;
    let ph = p_next * &step.h;
    let pg = p_next * &step.gu;
    let pl = p_next * &step.l;
    let mut r_hat = r * h + step.gu.transpose() * &pg + step.l.transpose() * &pl * h;
    symmetrize(&mut r_hat);
    let s = step.gu.transpose() * &pf + step.l.transpose() * &ph * h;
    StepQuadratic { r_hat, s, pf, ph }
}

/// Factorizes `R̂_k`, failing when it is not strictly positive definite.
pub(crate) fn factor_gain(
    r_hat: &Mat,
    k: usize,
    time: f64,
) -> Result<(Cholesky<f64, nalgebra::Dyn>, f64)> {
    let eig = min_eigenvalue(r_hat);
    if !(eig > 0.0) {
        return Err(Error::Regularity {
            step: k,
            time,
            eigenvalue: eig,
        });
    }
    let chol = Cholesky::new(r_hat.clone()).ok_or(Error::Regularity {
        step: k,
        time,
        eigenvalue: eig,
    })?;
    Ok((chol, eig))
}

/// Adds `h · Q` to the leading `n × n` block (the `h EᵀQE` term).
pub(crate) fn add_running_state_cost(p: &mut Mat, q: &Mat, h: f64) {
    let n = q.nrows();
    let mut top = p.view_mut((0, 0), (n, n));
    top += q * h;
}

/// Backward dynamic programming for the discretized path-dependent Riccati
/// equation, from `P_N = G` down to `P_0`.
pub fn solve_dp(lifted: &LiftedSystem, coeffs: &SampledCoefficients) -> Result<RiccatiSolution> {
    let steps = lifted.grid.steps;
    if coeffs.grid != lifted.grid {
        return Err(Error::Shape(
            "lifted system and coefficients disagree on the grid".into(),
        ));
    }
    let h = lifted.grid.h();
    let mut p = vec![Mat::zeros(0, 0); steps + 1];
    let mut theta = vec![Mat::zeros(0, 0); steps];
    p[steps] = coeffs.g.clone();
    let mut margin = f64::INFINITY;

    for k in (0..steps).rev() {
        let step = &lifted.steps[k];
        let sq = step_quadratic(step, &coeffs.r[k], h, &p[k + 1]);
        let (chol, eig) = factor_gain(&sq.r_hat, k, lifted.grid.node(k))?;
        margin = margin.min(eig / h);
        let gain = -chol.solve(&sq.s);
        let mut pk = step.f.transpose() * &sq.pf
            + step.h.transpose() * &sq.ph * h
            + sq.s.transpose() * &gain;
        add_running_state_cost(&mut pk, &coeffs.q[k], h);
        symmetrize(&mut pk);
        p[k] = pk;
        theta[k] = gain;
    }

    Ok(RiccatiSolution {
        n: lifted.n,
        m: lifted.m,
        grid: lifted.grid,
        p,
        theta,
        regularity_margin: margin,
    })
}
