//! Classical limit. With constant kernels and a constant free path the state
//! equation is an ordinary SDE, and the value reduces to `½ xᵀ Σ(t) x` where
//! `Σ` solves the matrix Riccati ODE
//!
//! ```text
//! Σ̇ + ΣA + AᵀΣ + CᵀΣC + Q − (ΣB + CᵀΣD)(R + DᵀΣD)⁻¹(BᵀΣ + DᵀΣC) = 0,  Σ(T) = G.
//! ```

use nalgebra::Cholesky;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, symmetrize, Mat, Vector};
use crate::model::{KernelSpec, ProblemSpec, WeightSpec};
use crate::problem::DiscreteProblem;
use crate::riccati::{solve_dp, RiccatiSolution};

/// Smallest number of RK4 steps used for the reference curve.
const REFERENCE_STEPS: usize = 4096;

/// Constant coefficients of the reduced SDE problem.
#[derive(Clone, Debug, PartialEq)]
pub struct SdeCoefficients {
    pub a: Mat,
    pub b: Mat,
    pub c: Mat,
    pub d: Mat,
    pub q: Mat,
    pub r: Mat,
    pub g: Mat,
}

impl SdeCoefficients {
    /// Extracts the constants of a reducible instance.
    pub fn from_spec(spec: &ProblemSpec) -> Result<Self> {
        if !spec.is_sde_reducible() {
            return Err(Error::Argument(
                "SDE reduction needs constant kernels, constant Q and R, and a constant free path"
                    .into(),
            ));
        }
        let constant = |k: &KernelSpec| match k {
            KernelSpec::Constant { value } => value.clone(),
            _ => unreachable!("checked by is_sde_reducible"),
        };
        let weight = |w: &WeightSpec| match w {
            WeightSpec::Constant(m) => m.clone(),
            WeightSpec::Tabulated { .. } => unreachable!("checked by is_sde_reducible"),
        };
        Ok(SdeCoefficients {
            a: constant(&spec.a),
            b: constant(&spec.b),
            c: constant(&spec.c),
            d: constant(&spec.d),
            q: weight(&spec.q),
            r: weight(&spec.r),
            g: spec.g.clone(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SdeRiccatiCurve {
    /// Increasing times from `t0` to `T`.
    pub times: Vec<f64>,
    pub sigma: Vec<Mat>,
}

impl SdeRiccatiCurve {
    pub fn steps(&self) -> usize {
        self.times.len() - 1
    }
}

/// Right-hand side `f` with `dΣ/dτ = f(Σ)` in reversed time `τ = T − t`.
fn reversed_rhs(k: &SdeCoefficients, sigma: &Mat, time: f64, step: usize) -> Result<Mat> {
    let gain = &k.r + k.d.transpose() * sigma * &k.d;
    let cross = sigma * &k.b + k.c.transpose() * sigma * &k.d;
    let quad = if gain.nrows() == 0 {
        Mat::zeros(sigma.nrows(), sigma.ncols())
    } else {
        let chol = Cholesky::new(gain.clone()).ok_or_else(|| Error::Regularity {
            step,
            time,
            eigenvalue: min_eigenvalue(&gain),
        })?;
        &cross * chol.solve(&cross.transpose())
    };
    let mut f =
        sigma * &k.a + k.a.transpose() * sigma + k.c.transpose() * sigma * &k.c + &k.q - quad;
    symmetrize(&mut f);
    Ok(f)
}

/// Integrates the Riccati ODE backward from `Σ(T) = G` with fixed-step RK4.
pub fn integrate_riccati_ode(
    k: &SdeCoefficients,
    t0: f64,
    t_end: f64,
    steps: usize,
) -> Result<SdeRiccatiCurve> {
    if steps == 0 || !(t0 < t_end) {
        return Err(Error::Argument(format!(
            "need steps ≥ 1 and t0 < T, got steps={steps}, [{t0}, {t_end}]"
        )));
    }
    let n = k.a.nrows();
    let m = k.b.ncols();
    let shapes_ok = k.a.shape() == (n, n)
        && k.c.shape() == (n, n)
        && k.b.shape() == (n, m)
        && k.d.shape() == (n, m)
        && k.q.shape() == (n, n)
        && k.r.shape() == (m, m)
        && k.g.shape() == (n, n);
    if !shapes_ok {
        return Err(Error::Shape("inconsistent SDE coefficient shapes".into()));
    }
    let dt = (t_end - t0) / steps as f64;
    let time = |i: usize| {
        if i == steps {
            t_end
        } else {
            t0 + i as f64 * dt
        }
    };
    let mut sigma = vec![Mat::zeros(n, n); steps + 1];
    sigma[steps] = k.g.clone();
    for i in (0..steps).rev() {
        let s = &sigma[i + 1];
        let (t, th) = (time(i + 1), time(i + 1) - 0.5 * dt);
        let k1 = reversed_rhs(k, s, t, i + 1)?;
        let k2 = reversed_rhs(k, &(s + &k1 * (0.5 * dt)), th, i + 1)?;
        let k3 = reversed_rhs(k, &(s + &k2 * (0.5 * dt)), th, i + 1)?;
        let k4 = reversed_rhs(k, &(s + &k3 * dt), time(i), i)?;
        let mut next = s + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
        symmetrize(&mut next);
        sigma[i] = next;
    }
    Ok(SdeRiccatiCurve {
        times: (0..=steps).map(time).collect(),
        sigma,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorRow {
    pub k: usize,
    pub s_k: f64,
    pub volterra_value: f64,
    pub ode_value: f64,
    pub abs_err: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ErrorTable {
    pub steps: usize,
    pub rows: Vec<ErrorRow>,
    pub max_err: f64,
}

impl ErrorTable {
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for row in &self.rows {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Compares `½ χ_kᵀ P_k χ_k` for the constant path `x` with `½ xᵀ Σ(s_k) x`.
/// The curve's step count must be a multiple of the solution's.
pub fn compare_with_volterra(
    sol: &RiccatiSolution,
    curve: &SdeRiccatiCurve,
    x: &[f64],
) -> Result<ErrorTable> {
    let steps = sol.grid.steps;
    if x.len() != sol.n {
        return Err(Error::Shape(format!(
            "point has length {}, expected {}",
            x.len(),
            sol.n
        )));
    }
    if !curve.steps().is_multiple_of(steps) {
        return Err(Error::Argument(format!(
            "reference curve has {} steps, not a multiple of {steps}",
            curve.steps()
        )));
    }
    let stride = curve.steps() / steps;
    let xv = Vector::from_column_slice(x);
    let rows = (0..=steps)
        .map(|k| {
            let chi = Vector::from_iterator(sol.dim(k), x.iter().copied().cycle().take(sol.dim(k)));
            let volterra_value = 0.5 * chi.dot(&(&sol.p[k] * &chi));
            let ode_value = 0.5 * xv.dot(&(&curve.sigma[k * stride] * &xv));
            ErrorRow {
                k,
                s_k: sol.grid.node(k),
                volterra_value,
                ode_value,
                abs_err: (volterra_value - ode_value).abs(),
            }
        })
        .collect::<Vec<_>>();
    let max_err = rows.iter().map(|r| r.abs_err).fold(0.0, f64::max);
    Ok(ErrorTable {
        steps,
        rows,
        max_err,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReductionReport {
    pub reference_steps: usize,
    /// `½ xᵀ Σ(t0) x`
    pub reference_value: f64,
    pub coarse: ErrorTable,
    pub fine: ErrorTable,
    /// `max_err(N) / max_err(2N)`; `None` when both errors vanish.
    pub ratio: Option<f64>,
}

/// Errors at which the comparison counts as exact.
const EXACT_TOLERANCE: f64 = 1e-12;

/// Solves the Volterra problem at `N` and `2N` steps and compares both
/// against a fine RK4 reference.
pub fn reduction_pipeline(spec: &ProblemSpec, steps: usize) -> Result<ReductionReport> {
    let k = SdeCoefficients::from_spec(spec)?;
    if steps == 0 {
        return Err(Error::Argument("N must be at least 1".into()));
    }
    let x = spec.free_path.at(spec.t0)?;
    let fine_steps = 2 * steps;
    let reference_steps = fine_steps * REFERENCE_STEPS.div_ceil(fine_steps);
    let curve = integrate_riccati_ode(&k, spec.t0, spec.t_end, reference_steps)?;
    let table = |n: usize| -> Result<ErrorTable> {
        let problem = DiscreteProblem::from_spec(spec, n)?;
        let sol = solve_dp(&problem.lifted, &problem.coeffs)?;
        compare_with_volterra(&sol, &curve, &x)
    };
    let coarse = table(steps)?;
    let fine = table(fine_steps)?;
    let xv = Vector::from_column_slice(&x);
    let reference_value = 0.5 * xv.dot(&(&curve.sigma[0] * &xv));
    let scale = 1.0 + reference_value.abs();
    let ratio =
        if coarse.max_err <= EXACT_TOLERANCE * scale && fine.max_err <= EXACT_TOLERANCE * scale {
            None
        } else {
            Some(coarse.max_err / fine.max_err)
        };
    Ok(ReductionReport {
        reference_steps,
        reference_value,
        coarse,
        fine,
        ratio,
    })
}
