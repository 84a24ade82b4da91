//! Type-III equations: the adjoint system rewritten so that only the
//! diagonal values `Zᶜ(s, s)`, `Zᴰ(s, s)` of the martingale parts enter.
//!
//! With `Ỹ_i = E_i[ψ_i] + Yᴬ_i + Zᶜ(i, i)` and, for `* ∈ {A, B, C, D}`,
//!
//! ```text
//! Y*_j = Σ_{i=j+1}^{N−1} h *_{ij}ᵀ Ỹ_i − Σ_{r≥j} Z*(j, r) ξ_r ,
//! ```
//!
//! one recovers `Y = Ỹ` and `Y⁰ = E[ψ⁰] + Yᴮ + Zᴰ(s, s)`.

use super::trajectory::validate_tree;
use super::tree::{zero_field, NodeField, ScenarioTree};
use crate::error::{Error, Result};
use crate::grid::SampledCoefficients;
use crate::linalg::Mat;

#[derive(Clone, Debug)]
pub struct Type3Solution {
    /// `Ỹ_j = E_j[ψ_j] + Yᴬ_j + Zᶜ(j, j)` at depth `j`.
    pub y_tilde: Vec<NodeField>,
    pub ya: Vec<NodeField>,
    pub yb: Vec<NodeField>,
    pub yc: Vec<NodeField>,
    pub yd: Vec<NodeField>,
    /// `za[j][r − j] = Zᴬ(s_j, s_r)` at depth `r ≥ j`; likewise for the others.
    pub za: Vec<Vec<NodeField>>,
    pub zb: Vec<Vec<NodeField>>,
    pub zc: Vec<Vec<NodeField>>,
    pub zd: Vec<Vec<NodeField>>,
}

impl Type3Solution {
    /// Diagonal value `Zᴰ(s_j, s_j)`.
    pub fn zd_diag(&self, j: usize) -> &NodeField {
        &self.zd[j][0]
    }

    pub fn zc_diag(&self, j: usize) -> &NodeField {
        &self.zc[j][0]
    }
}

/// Solves the coupled Type-III system for the driver `ψ` (leaf fields, one per `j < N`).
pub fn solve_type3(
    coeffs: &SampledCoefficients,
    tree: &ScenarioTree,
    psi: &[NodeField],
) -> Result<Type3Solution> {
    validate_tree(coeffs, tree)?;
    let (n, m, steps, h) = (coeffs.n, coeffs.m, coeffs.steps(), coeffs.h());
    let leaves = tree.width(steps);
    if psi.len() != steps
        || psi
            .iter()
            .any(|f| f.len() != leaves || f.iter().any(|v| v.len() != n))
    {
        return Err(Error::Shape("driver ψ does not match the tree".into()));
    }
    let mut sol = Type3Solution {
        y_tilde: vec![Vec::new(); steps],
        ya: vec![Vec::new(); steps],
        yb: vec![Vec::new(); steps],
        yc: vec![Vec::new(); steps],
        yd: vec![Vec::new(); steps],
        za: vec![Vec::new(); steps],
        zb: vec![Vec::new(); steps],
        zc: vec![Vec::new(); steps],
        zd: vec![Vec::new(); steps],
    };
    for j in (0..steps).rev() {
        let mut w: [NodeField; 4] = [
            zero_field(leaves, n),
            zero_field(leaves, m),
            zero_field(leaves, n),
            zero_field(leaves, m),
        ];
        for i in (j + 1)..steps {
            let kernels: [Mat; 4] = [
                coeffs.a(i, j).transpose() * h,
                coeffs.b(i, j).transpose() * h,
                coeffs.c(i, j).transpose() * h,
                coeffs.d(i, j).transpose() * h,
            ];
            for (wk, kt) in w.iter_mut().zip(&kernels) {
                for (leaf, v) in wk.iter_mut().enumerate() {
                    *v += kt * &sol.y_tilde[i][tree.ancestor(steps, leaf, i)];
                }
            }
        }
        let ys: Vec<NodeField> = w.iter().map(|f| tree.cond_expect(f, steps, j)).collect();
        let zs: Vec<Vec<NodeField>> = w
            .iter()
            .map(|f| (j..steps).map(|r| tree.mcoeff_at(f, steps, r)).collect())
            .collect();
        let epsi = tree.cond_expect(&psi[j], steps, j);
        sol.y_tilde[j] = epsi
            .iter()
            .zip(&ys[0])
            .zip(&zs[2][0])
            .map(|((e, a), c)| e + a + c)
            .collect();
        let [ya, yb, yc, yd]: [NodeField; 4] = ys.try_into().expect("four fields");
        let [za, zb, zc, zd]: [Vec<NodeField>; 4] = zs.try_into().expect("four fields");
        sol.ya[j] = ya;
        sol.yb[j] = yb;
        sol.yc[j] = yc;
        sol.yd[j] = yd;
        sol.za[j] = za;
        sol.zb[j] = zb;
        sol.zc[j] = zc;
        sol.zd[j] = zd;
    }
    Ok(sol)
}
