//! Residuals of the identities satisfied by the optimality system.

use serde::Serialize;

use super::bsvie::BsvieSystem;
use super::tree::NodeField;
use crate::error::{Error, Result};
use crate::grid::SampledCoefficients;
use crate::linalg::Vector;
use crate::riccati::RiccatiSolution;

/// Largest residual and where it occurs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Residual {
    pub value: f64,
    /// Step index of the worst node.
    pub step: usize,
    /// Sign string of the worst node.
    pub node: String,
}

impl Residual {
    fn zero() -> Self {
        Residual {
            value: 0.0,
            step: 0,
            node: String::new(),
        }
    }
}

struct Tracker<'a> {
    sys: &'a BsvieSystem,
    worst: Residual,
}

impl<'a> Tracker<'a> {
    fn new(sys: &'a BsvieSystem) -> Self {
        Tracker {
            sys,
            worst: Residual::zero(),
        }
    }

    fn see(&mut self, v: &Vector, step: usize, level: usize, node: usize) {
        let a = v.amax();
        if a > self.worst.value || a.is_nan() {
            self.worst = Residual {
                value: a,
                step,
                node: self.sys.tree.sign_string(level, node),
            };
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StationarityReport {
    /// `max |R ū + Y⁰|`
    pub maximum_principle: Residual,
    /// `max |R ū + E[ψ⁰] + Yᴮ + Zᴰ(s,s)|`
    pub type3_form: Residual,
    /// `max |Y⁰ − (E[ψ⁰] + Yᴮ + Zᴰ(s,s))|`, the gap between the two forms.
    pub agreement: f64,
}

/// Stationarity of the control along the trajectory stored in `sys`.
pub fn check_stationarity(sys: &BsvieSystem, coeffs: &SampledCoefficients) -> StationarityReport {
    let tree = &sys.tree;
    let steps = tree.depth;
    let mut mp = Tracker::new(sys);
    let mut t3 = Tracker::new(sys);
    let mut agreement = 0.0_f64;
    for l in 0..steps {
        let epsi0 = tree.cond_expect(&sys.psi0[l], steps, l);
        for node in 0..tree.width(l) {
            let ru = &coeffs.r[l] * &sys.u[l][node];
            let alt = &epsi0[node] + &sys.type3.yb[l][node] + &sys.type3.zd_diag(l)[node];
            mp.see(&(&ru + &sys.y0[l][node]), l, l, node);
            t3.see(&(&ru + &alt), l, l, node);
            agreement = agreement.max((&sys.y0[l][node] - &alt).amax());
        }
    }
    StationarityReport {
        maximum_principle: mp.worst,
        type3_form: t3.worst,
        agreement,
    }
}

/// `max |Y_j − E_l[Y_j] − Σ_{l≤r<j} Z(j,r) ξ_r|` over all `l < j` and nodes.
pub fn m_solution_residual(sys: &BsvieSystem) -> Residual {
    let tree = &sys.tree;
    let mut t = Tracker::new(sys);
    for j in 0..tree.depth {
        for l in 0..j {
            let e = tree.cond_expect(&sys.y[j], j, l);
            for node in 0..tree.width(j) {
                let mut rhs = e[tree.ancestor(j, node, l)].clone();
                for r in l..j {
                    rhs += &sys.z[j][r][tree.ancestor(j, node, r)] * tree.xi(j, node, r);
                }
                t.see(&(&sys.y[j][node] - rhs), j, j, node);
            }
        }
    }
    t.worst
}

/// Pathwise residual of the adjoint equations at the leaves:
/// the BSDE `G X̄_N = η_k + Σ_{r≥k} ζ_r ξ_r`, the Type-II equation for `(Y, Z)`
/// and the Type-I equation for `(Y⁰, Z⁰)`.
pub fn adjoint_equation_residual(sys: &BsvieSystem, coeffs: &SampledCoefficients) -> Residual {
    let tree = &sys.tree;
    let steps = tree.depth;
    let h = tree.h;
    let mut t = Tracker::new(sys);
    for leaf in 0..tree.width(steps) {
        let anc = |k: usize| tree.ancestor(steps, leaf, k);
        let gx = &coeffs.g * &sys.x[steps][leaf];
        for k in 0..=steps {
            let mut rhs = sys.eta[k][anc(k)].clone();
            for r in k..steps {
                rhs += &sys.zeta[r][anc(r)] * tree.xi(steps, leaf, r);
            }
            t.see(&(&gx - rhs), k, steps, leaf);
        }
        for j in 0..steps {
            let mut lhs = sys.y[j][anc(j)].clone();
            let mut lhs0 = sys.y0[j][anc(j)].clone();
            for r in j..steps {
                let xi = tree.xi(steps, leaf, r);
                lhs += &sys.z[j][r][anc(r)] * xi;
                lhs0 += &sys.z0[j][r - j][anc(r)] * xi;
            }
            let mut rhs = sys.psi[j][leaf].clone();
            let mut rhs0 = sys.psi0[j][leaf].clone();
            for i in (j + 1)..steps {
                let (yi, zij) = (&sys.y[i][anc(i)], &sys.z[i][j][anc(j)]);
                rhs += (coeffs.a(i, j).transpose() * yi + coeffs.c(i, j).transpose() * zij) * h;
                rhs0 += (coeffs.b(i, j).transpose() * yi + coeffs.d(i, j).transpose() * zij) * h;
            }
            t.see(&(lhs - rhs), j, steps, leaf);
            t.see(&(lhs0 - rhs0), j, steps, leaf);
        }
    }
    t.worst
}

/// `max |Y − (E[ψ] + Yᴬ + Zᶜ(s,s))|` and the same for `Y⁰` with `ψ⁰, Yᴮ, Zᴰ`.
pub fn type3_representation_residual(sys: &BsvieSystem) -> Residual {
    let tree = &sys.tree;
    let steps = tree.depth;
    let mut t = Tracker::new(sys);
    for j in 0..steps {
        let epsi = tree.cond_expect(&sys.psi[j], steps, j);
        let epsi0 = tree.cond_expect(&sys.psi0[j], steps, j);
        for node in 0..tree.width(j) {
            let y = &epsi[node] + &sys.type3.ya[j][node] + &sys.type3.zc_diag(j)[node];
            let y0 = &epsi0[node] + &sys.type3.yb[j][node] + &sys.type3.zd_diag(j)[node];
            t.see(&(&sys.y[j][node] - y), j, j, node);
            t.see(&(&sys.y0[j][node] - y0), j, j, node);
        }
    }
    t.worst
}

/// Compares, at every step `k` and node, the block vector
/// `(h E_k[Y_k], …, h E_k[Y_{N−1}], E_k[G X̄_N])` with `P_k χ̄_k`.
/// Pairing with unit test paths makes this the largest entry of the difference.
pub fn check_dual_representation(
    sys: &BsvieSystem,
    sol: &RiccatiSolution,
    chi: &[NodeField],
) -> Result<Residual> {
    let tree = &sys.tree;
    let steps = tree.depth;
    let n = sol.n;
    if sol.grid.steps != steps || chi.len() != steps + 1 {
        return Err(Error::Shape(
            "solution and trajectory do not match the tree".into(),
        ));
    }
    let h = tree.h;
    let mut t = Tracker::new(sys);
    for k in 0..=steps {
        let ey: Vec<NodeField> = (k..steps)
            .map(|j| tree.cond_expect(&sys.y[j], j, k))
            .collect();
        for node in 0..tree.width(k) {
            let c = &chi[k][node];
            if c.len() != sol.dim(k) {
                return Err(Error::Shape(format!("χ at step {k} has the wrong length")));
            }
            let mut lhs = Vector::zeros(sol.dim(k));
            for b in 0..(steps - k) {
                lhs.rows_mut(b * n, n).copy_from(&(&ey[b][node] * h));
            }
            lhs.rows_mut((steps - k) * n, n)
                .copy_from(&sys.eta[k][node]);
            t.see(&(lhs - &sol.p[k] * c), k, k, node);
        }
    }
    Ok(t.worst)
}
