//! Adjoint equations of the optimality system, solved exactly by backward
//! induction on the tree.
//!
//! With `ψ_j = Q_jX̄_j + A_{Nj}ᵀGX̄_N + C_{Nj}ᵀζ_j` and
//! `ψ⁰_j = B_{Nj}ᵀGX̄_N + D_{Nj}ᵀζ_j`, the pair `(Y, Z)` solves
//!
//! ```text
//! Y_j = ψ_j + Σ_{i=j+1}^{N−1} h [A_{ij}ᵀY_i + C_{ij}ᵀZ(i,j)] − Σ_{r≥j} Z(j,r) ξ_r
//! ```
//!
//! in the M-solution sense (`Z(j,r)` for `r < j` is the martingale
//! representation of `Y_j`), and `(Y⁰, Z⁰)` solves the same equation with
//! `B, D` in place of `A, C`. The gradient of the cost with respect to the
//! control at `(l, σ)` is `h (R_l ū + Y⁰_l)`.

use super::trajectory::{validate_tree, Trajectory};
use super::tree::{NodeField, ScenarioTree};
use super::type3::{solve_type3, Type3Solution};
use crate::error::{Error, Result};
use crate::grid::SampledCoefficients;
use crate::linalg::Mat;

#[derive(Clone, Debug)]
pub struct BsvieSystem {
    pub tree: ScenarioTree,
    pub x: Vec<NodeField>,
    pub u: Vec<NodeField>,
    /// `η_k = E_k[G X̄_N]`, `k = 0..=N`.
    pub eta: Vec<NodeField>,
    /// `ζ_k`, the martingale coefficient of `G X̄_N` at step `k`.
    pub zeta: Vec<NodeField>,
    /// `ψ_j` and `ψ⁰_j` as leaf fields, `j < N`.
    pub psi: Vec<NodeField>,
    pub psi0: Vec<NodeField>,
    /// `Y_j` at depth `j`.
    pub y: Vec<NodeField>,
    /// `z[j][r] = Z(s_j, s_r)` at depth `r`, for every `r < N`.
    pub z: Vec<Vec<NodeField>>,
    pub y0: Vec<NodeField>,
    /// `z0[l][r − l] = Z⁰(s_l, s_r)` for `r ≥ l`.
    pub z0: Vec<Vec<NodeField>>,
    pub type3: Type3Solution,
}

/// Adds `h Σ_{i=j+1}^{N−1} [Kᵢⱼᵀ Y_i + Lᵢⱼᵀ Z(i,j)]` to a leaf field.
fn add_volterra_drift(
    tree: &ScenarioTree,
    acc: &mut NodeField,
    j: usize,
    y: &[NodeField],
    z: &[Vec<NodeField>],
    drift: impl Fn(usize, usize) -> (Mat, Mat),
) {
    let steps = tree.depth;
    let h = tree.h;
    for i in (j + 1)..steps {
        let (k, l) = drift(i, j);
        let (kt, lt) = (k.transpose() * h, l.transpose() * h);
        for (leaf, a) in acc.iter_mut().enumerate() {
            *a += &kt * &y[i][tree.ancestor(steps, leaf, i)]
                + &lt * &z[i][j][tree.ancestor(steps, leaf, j)];
        }
    }
}

pub fn solve_optimality_bsvies(
    coeffs: &SampledCoefficients,
    tree: &ScenarioTree,
    traj: &Trajectory,
) -> Result<BsvieSystem> {
    validate_tree(coeffs, tree)?;
    let (n, m, steps) = (coeffs.n, coeffs.m, coeffs.steps());
    if traj.x.len() != steps + 1 || traj.u.len() != steps {
        return Err(Error::Shape("trajectory does not match the tree".into()));
    }
    let terminal: NodeField = traj.x[steps].iter().map(|x| &coeffs.g * x).collect();
    let eta: Vec<NodeField> = (0..=steps)
        .map(|k| tree.cond_expect(&terminal, steps, k))
        .collect();
    let zeta: Vec<NodeField> = (0..steps).map(|k| tree.mcoeff(&eta[k + 1])).collect();

    let lift_n = |f: &NodeField, k: usize| tree.lift(f, k, steps);
    let mut psi = Vec::with_capacity(steps);
    let mut psi0 = Vec::with_capacity(steps);
    for j in 0..steps {
        let qx: NodeField = traj.x[j].iter().map(|x| &coeffs.q[j] * x).collect();
        let (qx, zj) = (lift_n(&qx, j), lift_n(&zeta[j], j));
        let (at, ct) = (
            coeffs.a(steps, j).transpose(),
            coeffs.c(steps, j).transpose(),
        );
        let (bt, dt) = (
            coeffs.b(steps, j).transpose(),
            coeffs.d(steps, j).transpose(),
        );
        psi.push(
            (0..terminal.len())
                .map(|w| &qx[w] + &at * &terminal[w] + &ct * &zj[w])
                .collect::<NodeField>(),
        );
        psi0.push(
            (0..terminal.len())
                .map(|w| &bt * &terminal[w] + &dt * &zj[w])
                .collect::<NodeField>(),
        );
    }

    let mut y: Vec<NodeField> = vec![Vec::new(); steps];
    let mut z: Vec<Vec<NodeField>> = vec![vec![Vec::new(); steps]; steps];
    for j in (0..steps).rev() {
        let mut theta = psi[j].clone();
        add_volterra_drift(tree, &mut theta, j, &y, &z, |i, j| {
            (coeffs.a(i, j).clone(), coeffs.c(i, j).clone())
        });
        y[j] = tree.cond_expect(&theta, steps, j);
        for r in j..steps {
            z[j][r] = tree.mcoeff_at(&theta, steps, r);
        }
        for r in 0..j {
            z[j][r] = tree.mcoeff_at(&y[j], j, r);
        }
    }

    let mut y0: Vec<NodeField> = Vec::with_capacity(steps);
    let mut z0: Vec<Vec<NodeField>> = Vec::with_capacity(steps);
    for l in 0..steps {
        let mut theta = psi0[l].clone();
        add_volterra_drift(tree, &mut theta, l, &y, &z, |i, l| {
            (coeffs.b(i, l).clone(), coeffs.d(i, l).clone())
        });
        y0.push(tree.cond_expect(&theta, steps, l));
        z0.push(
            (l..steps)
                .map(|r| tree.mcoeff_at(&theta, steps, r))
                .collect(),
        );
    }

    let any_nan = |fs: &[NodeField]| {
        fs.iter()
            .flatten()
            .any(|v| v.iter().any(|x| !x.is_finite()))
    };
    if any_nan(&y) || any_nan(&y0) || any_nan(&eta) {
        return Err(Error::Argument(
            "non-finite values in the adjoint system".into(),
        ));
    }
    debug_assert!(y0.iter().flatten().all(|v| v.len() == m));
    debug_assert!(y.iter().flatten().all(|v| v.len() == n));

    let type3 = solve_type3(coeffs, tree, &psi)?;
    Ok(BsvieSystem {
        tree: *tree,
        x: traj.x.clone(),
        u: traj.u.clone(),
        eta,
        zeta,
        psi,
        psi0,
        y,
        z,
        y0,
        z0,
        type3,
    })
}
