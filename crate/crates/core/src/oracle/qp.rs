//! The control problem on the tree as one explicit quadratic program over
//! all adapted control variables.
//!
//! Along each leaf the state is eliminated by forward substitution, so the
//! cost becomes `½ [xᵀM₀x + 2uᵀM₁x + uᵀM₂u]` in the stacked controls `u`
//! and the initial path `x`. The optimum solves `M₂u + M₁x = 0`.

use nalgebra::Cholesky;

use super::trajectory::{validate_tree, AdaptedControl};
use super::tree::ScenarioTree;
use crate::error::{Error, Result};
use crate::grid::{DiscretePath, SampledCoefficients};
use crate::linalg::{min_eigenvalue, symmetrize, Mat};

/// Largest number of scalar control variables the dense solve accepts.
pub const MAX_QP_VARIABLES: usize = 4096;

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub control: AdaptedControl,
    pub value: f64,
}

/// Assembled quadratic form.
#[derive(Clone, Debug)]
pub struct QuadraticForm {
    pub m0: Mat,
    pub m1: Mat,
    pub m2: Mat,
}

pub fn assemble_qp(coeffs: &SampledCoefficients, tree: &ScenarioTree) -> Result<QuadraticForm> {
    validate_tree(coeffs, tree)?;
    let (n, m, steps, h) = (coeffs.n, coeffs.m, coeffs.steps(), coeffs.h());
    let nvar = m * ((1usize << steps) - 1);
    if nvar > MAX_QP_VARIABLES {
        return Err(Error::TooLarge {
            dim: nvar,
            limit: MAX_QP_VARIABLES,
        });
    }
    let xdim = (steps + 1) * n;
    let local = xdim + steps * m;
    let weight = 1.0 / (1u64 << steps) as f64;

    let mut m0 = Mat::zeros(xdim, xdim);
    let mut m1 = Mat::zeros(nvar, xdim);
    let mut m2 = Mat::zeros(nvar, nvar);

    for leaf in 0..tree.width(steps) {
        // W_j maps [x; u_0 .. u_{N−1}] along this leaf to X_j.
        let mut w: Vec<Mat> = Vec::with_capacity(steps + 1);
        for j in 0..=steps {
            let mut wj = Mat::zeros(n, local);
            wj.view_mut((0, j * n), (n, n)).fill_with_identity();
            for l in 0..j {
                let xi = tree.xi(steps, leaf, l);
                let a = coeffs.a(j, l) * h + coeffs.c(j, l) * xi;
                let b = coeffs.b(j, l) * h + coeffs.d(j, l) * xi;
                wj += &a * &w[l];
                let mut cols = wj.view_mut((0, xdim + l * m), (n, m));
                cols += b;
            }
            w.push(wj);
        }
        let mut hess = w[steps].transpose() * &coeffs.g * &w[steps];
        for k in 0..steps {
            hess += w[k].transpose() * &coeffs.q[k] * &w[k] * h;
            let mut block = hess.view_mut((xdim + k * m, xdim + k * m), (m, m));
            block += &coeffs.r[k] * h;
        }
        hess *= weight;

        let globals: Vec<usize> = (0..steps)
            .map(|k| AdaptedControl::offset(m, k, tree.ancestor(steps, leaf, k)))
            .collect();
        m0 += hess.view((0, 0), (xdim, xdim));
        for (k, &gk) in globals.iter().enumerate() {
            let lk = xdim + k * m;
            let mut rows = m1.view_mut((gk, 0), (m, xdim));
            rows += hess.view((lk, 0), (m, xdim));
            for (l, &gl) in globals.iter().enumerate() {
                let ll = xdim + l * m;
                let mut blk = m2.view_mut((gk, gl), (m, m));
                blk += hess.view((lk, ll), (m, m));
            }
        }
    }
    symmetrize(&mut m0);
    symmetrize(&mut m2);
    Ok(QuadraticForm { m0, m1, m2 })
}

/// Minimizes the expected cost over all adapted controls.
pub fn solve_adapted_qp(
    coeffs: &SampledCoefficients,
    tree: &ScenarioTree,
    chi0: &DiscretePath,
) -> Result<QpSolution> {
    let form = assemble_qp(coeffs, tree)?;
    if chi0.start != 0 || chi0.values.len() != form.m0.nrows() {
        return Err(Error::Shape("initial path does not cover the grid".into()));
    }
    let x = &chi0.values;
    let rhs = -(&form.m1 * x);
    let u = if form.m2.nrows() == 0 {
        rhs
    } else {
        let chol = Cholesky::new(form.m2.clone()).ok_or_else(|| Error::Convexity {
            min_eigenvalue: min_eigenvalue(&form.m2),
        })?;
        chol.solve(&rhs)
    };
    let value = 0.5 * (x.dot(&(&form.m0 * x)) + u.dot(&(&form.m1 * x)));
    Ok(QpSolution {
        control: AdaptedControl::from_stacked(tree, coeffs.m, &u),
        value,
    })
}
