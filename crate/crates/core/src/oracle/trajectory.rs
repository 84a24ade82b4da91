//! State and control processes on the scenario tree.

use super::tree::{NodeField, ScenarioTree};
use crate::error::{Error, Result};
use crate::grid::{DiscretePath, SampledCoefficients};
use crate::linalg::{Mat, Vector};
use crate::riccati::LiftedSystem;

/// Control `u_k` at every depth-`k` node, `k < N`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptedControl {
    pub m: usize,
    pub u: Vec<NodeField>,
}

impl AdaptedControl {
    pub fn zeros(tree: &ScenarioTree, m: usize) -> Self {
        AdaptedControl {
            m,
            u: (0..tree.depth)
                .map(|k| vec![Vector::zeros(m); tree.width(k)])
                .collect(),
        }
    }

    /// Offset of `u_k(σ)` in the stacked variable vector.
    pub fn offset(m: usize, k: usize, node: usize) -> usize {
        m * ((1 << k) - 1 + node)
    }

    pub fn from_stacked(tree: &ScenarioTree, m: usize, v: &Vector) -> Self {
        let u = (0..tree.depth)
            .map(|k| {
                (0..tree.width(k))
                    .map(|s| v.rows(Self::offset(m, k, s), m).into_owned())
                    .collect()
            })
            .collect();
        AdaptedControl { m, u }
    }
}

/// Optimal or replayed trajectory on the tree. `x[k]` and `u[k]` live at
/// depth `k`; `chi[k]`, when present, is the forecast vector `χ_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub x: Vec<NodeField>,
    pub u: Vec<NodeField>,
    pub chi: Option<Vec<NodeField>>,
}

fn check_tree(coeffs: &SampledCoefficients, tree: &ScenarioTree) -> Result<()> {
    if tree.depth != coeffs.steps() {
        return Err(Error::Shape(format!(
            "tree depth {} differs from {} grid steps",
            tree.depth,
            coeffs.steps()
        )));
    }
    if (tree.h - coeffs.h()).abs() > 1e-14 * coeffs.h() {
        return Err(Error::Shape("tree step differs from the grid step".into()));
    }
    Ok(())
}

fn check_chi0(coeffs: &SampledCoefficients, chi0: &DiscretePath) -> Result<()> {
    if chi0.start != 0 || chi0.values.len() != (coeffs.steps() + 1) * coeffs.n {
        return Err(Error::Shape("initial path does not cover the grid".into()));
    }
    Ok(())
}

/// Runs the Euler scheme
/// `X_j = x_j + Σ_{l<j} [(hA_{jl} + ξ_l C_{jl}) X_l + (hB_{jl} + ξ_l D_{jl}) u_l]`
/// node by node under a given adapted control.
pub fn replay_controls(
    coeffs: &SampledCoefficients,
    tree: &ScenarioTree,
    chi0: &DiscretePath,
    control: &AdaptedControl,
) -> Result<Trajectory> {
    check_tree(coeffs, tree)?;
    check_chi0(coeffs, chi0)?;
    let (n, steps, h) = (coeffs.n, coeffs.steps(), coeffs.h());
    if control.m != coeffs.m
        || control.u.len() != steps
        || control
            .u
            .iter()
            .enumerate()
            .any(|(k, f)| f.len() != tree.width(k) || f.iter().any(|v| v.len() != coeffs.m))
    {
        return Err(Error::Shape(
            "adapted control does not match the tree".into(),
        ));
    }
    let mut x: Vec<NodeField> = Vec::with_capacity(steps + 1);
    for j in 0..=steps {
        let base = chi0.block(j);
        let field = (0..tree.width(j))
            .map(|node| {
                let mut xj = base.clone();
                for l in 0..j {
                    let xi = tree.xi(j, node, l);
                    let anc = tree.ancestor(j, node, l);
                    let a = coeffs.a(j, l) * h + coeffs.c(j, l) * xi;
                    let b = coeffs.b(j, l) * h + coeffs.d(j, l) * xi;
                    xj += a * &x[l][anc] + b * &control.u[l][anc];
                }
                debug_assert_eq!(xj.len(), n);
                xj
            })
            .collect();
        x.push(field);
    }
    Ok(Trajectory {
        x,
        u: control.u.clone(),
        chi: None,
    })
}

/// Runs the lifted closed loop `u_k = Θ_k χ_k` over every node.
pub fn replay_feedback(
    lifted: &LiftedSystem,
    coeffs: &SampledCoefficients,
    tree: &ScenarioTree,
    chi0: &DiscretePath,
    theta: &[Mat],
) -> Result<Trajectory> {
    check_tree(coeffs, tree)?;
    check_chi0(coeffs, chi0)?;
    let (n, steps) = (coeffs.n, coeffs.steps());
    if theta.len() != steps
        || theta
            .iter()
            .enumerate()
            .any(|(k, t)| t.shape() != (coeffs.m, lifted.dim(k)))
    {
        return Err(Error::Shape(
            "feedback operators do not match the grid".into(),
        ));
    }
    let sq = tree.h.sqrt();
    let mut chi: Vec<NodeField> = vec![vec![chi0.values.clone()]];
    let mut u: Vec<NodeField> = Vec::with_capacity(steps);
    for k in 0..steps {
        let step = &lifted.steps[k];
        let uk: NodeField = chi[k].iter().map(|c| &theta[k] * c).collect();
        let next: NodeField = chi[k]
            .iter()
            .zip(&uk)
            .flat_map(|(c, uc)| {
                let drift = &step.f * c + &step.gu * uc;
                let noise = &step.h * c + &step.l * uc;
                [&drift - &noise * sq, &drift + &noise * sq]
            })
            .collect();
        u.push(uk);
        chi.push(next);
    }
    let x = chi
        .iter()
        .map(|f| f.iter().map(|c| c.rows(0, n).into_owned()).collect())
        .collect();
    Ok(Trajectory {
        x,
        u,
        chi: Some(chi),
    })
}

/// Exact expected cost `½ E[Σ_k h (XᵀQX + uᵀRu) + X_NᵀG X_N]` on the tree.
pub fn trajectory_cost(
    coeffs: &SampledCoefficients,
    tree: &ScenarioTree,
    traj: &Trajectory,
) -> f64 {
    let steps = tree.depth;
    let h = tree.h;
    let mean = |vals: Vec<f64>| vals.iter().sum::<f64>() / vals.len() as f64;
    let mut total = 0.0;
    for k in 0..steps {
        let running = traj.x[k]
            .iter()
            .zip(&traj.u[k])
            .map(|(x, u)| x.dot(&(&coeffs.q[k] * x)) + u.dot(&(&coeffs.r[k] * u)))
            .collect();
        total += h * mean(running);
    }
    total += mean(
        traj.x[steps]
            .iter()
            .map(|x| x.dot(&(&coeffs.g * x)))
            .collect(),
    );
    0.5 * total
}

pub(crate) fn validate_tree(coeffs: &SampledCoefficients, tree: &ScenarioTree) -> Result<()> {
    check_tree(coeffs, tree)
}
