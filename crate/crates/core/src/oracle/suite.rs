//! Named checks with thresholds, as written to validation reports.

use serde::Serialize;

use super::bsvie::{solve_optimality_bsvies, BsvieSystem};
use super::checks::{
    adjoint_equation_residual, check_dual_representation, check_stationarity, m_solution_residual,
    type3_representation_residual, Residual,
};
use super::qp::{assemble_qp, solve_adapted_qp, QpSolution};
use super::trajectory::{replay_controls, replay_feedback};
use super::tree::ScenarioTree;
use crate::error::{Error, Result};
use crate::linalg::min_eigenvalue;
use crate::problem::DiscreteProblem;
use crate::riccati::{value_at, RiccatiSolution};

/// Largest QP for which the Hessian spectrum is reported.
const EIGEN_REPORT_LIMIT: usize = 512;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Bound {
    /// Passes when `value ≤ threshold`.
    AtMost,
    /// Passes when `value ≥ threshold`.
    AtLeast,
    /// Passes when `value > threshold`.
    Above,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub value: f64,
    pub bound: Bound,
    pub threshold: f64,
    pub passed: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub location: Option<String>,
}

impl CheckResult {
    pub fn new(name: &str, value: f64, bound: Bound, threshold: f64) -> Self {
        let passed = match bound {
            Bound::AtMost => value <= threshold,
            Bound::AtLeast => value >= threshold,
            Bound::Above => value > threshold,
        };
        CheckResult {
            name: name.into(),
            value,
            bound,
            threshold,
            passed,
            location: None,
        }
    }

    pub fn at(mut self, location: impl Into<String>) -> Self {
        self.location = Some(location.into());
        self
    }

    fn residual(name: &str, r: &Residual, threshold: f64) -> Self {
        Self::new(name, r.value, Bound::AtMost, threshold)
            .at(format!("step {} node '{}'", r.step, r.node))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct OracleReport {
    pub passed: bool,
    pub checks: Vec<CheckResult>,
}

impl OracleReport {
    pub fn push(&mut self, check: CheckResult) {
        self.checks.push(check);
        self.passed = self.checks.iter().all(|c| c.passed);
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn get(&self, name: &str) -> Option<&CheckResult> {
        self.checks.iter().find(|c| c.name == name)
    }
}

fn adjoint_scale(sys: &BsvieSystem) -> f64 {
    let fields = sys
        .y
        .iter()
        .chain(&sys.y0)
        .chain(&sys.eta)
        .chain(&sys.psi)
        .chain(&sys.psi0);
    1.0 + fields.flatten().map(|v| v.amax()).fold(0.0, f64::max)
}

fn adjoint_checks(
    report: &mut OracleReport,
    prefix: &str,
    sys: &BsvieSystem,
    problem: &DiscreteProblem,
) {
    let scale = adjoint_scale(sys);
    let name = |s: &str| format!("{prefix}_{s}");
    report.push(CheckResult::residual(
        &name("m_solution"),
        &m_solution_residual(sys),
        1e-12 * scale,
    ));
    report.push(CheckResult::residual(
        &name("adjoint_equations"),
        &adjoint_equation_residual(sys, &problem.coeffs),
        1e-10 * scale,
    ));
    report.push(CheckResult::residual(
        &name("type3_representation"),
        &type3_representation_residual(sys),
        1e-12 * scale,
    ));
}

/// Convexity of the adapted QP, with its optimum when convex.
pub fn qp_convexity(problem: &DiscreteProblem) -> Result<(CheckResult, Option<QpSolution>)> {
    let coeffs = &problem.coeffs;
    let tree = ScenarioTree::new(problem.grid.steps, problem.grid.h())?;
    let form = assemble_qp(coeffs, &tree)?;
    match solve_adapted_qp(coeffs, &tree, &problem.chi0) {
        Ok(qp) => {
            let eig = if form.m2.nrows() <= EIGEN_REPORT_LIMIT {
                min_eigenvalue(&form.m2)
            } else {
                f64::INFINITY
            };
            Ok((
                CheckResult::new("qp_convexity", eig, Bound::Above, 0.0),
                Some(qp),
            ))
        }
        Err(Error::Convexity { min_eigenvalue }) => Ok((
            CheckResult::new("qp_convexity", min_eigenvalue, Bound::Above, 0.0),
            None,
        )),
        Err(e) => Err(e),
    }
}

/// Runs every oracle identity on `problem` against the Riccati solution `sol`.
///
/// A non-convex control problem is reported as a failing `qp_convexity`
/// check; the checks that need the QP optimum are then skipped.
pub fn run_identity_suite(
    problem: &DiscreteProblem,
    sol: &RiccatiSolution,
) -> Result<OracleReport> {
    let coeffs = &problem.coeffs;
    let tree = ScenarioTree::new(problem.grid.steps, problem.grid.h())?;
    let mut report = OracleReport {
        passed: true,
        checks: Vec::new(),
    };
    let value = value_at(sol, 0, &problem.chi0)?;

    let (convexity, qp) = qp_convexity(problem)?;
    report.push(convexity);

    let fb = replay_feedback(&problem.lifted, coeffs, &tree, &problem.chi0, &sol.theta)?;
    let sys = solve_optimality_bsvies(coeffs, &tree, &fb)?;
    let st = check_stationarity(&sys, coeffs);
    report.push(CheckResult::residual(
        "stationarity_feedback",
        &st.maximum_principle,
        1e-8,
    ));
    report.push(CheckResult::residual(
        "stationarity_type3_form",
        &st.type3_form,
        1e-8,
    ));
    report.push(CheckResult::new(
        "stationarity_forms_agree",
        st.agreement,
        Bound::AtMost,
        1e-12,
    ));
    adjoint_checks(&mut report, "feedback", &sys, problem);
    let chi = fb.chi.as_deref().expect("feedback replay records χ");
    let dual = check_dual_representation(&sys, sol, chi)?;
    report.push(CheckResult::residual("dual_representation", &dual, 1e-8));

    if let Some(qp) = qp {
        report.push(CheckResult::new(
            "value_matches_qp",
            (value - qp.value).abs(),
            Bound::AtMost,
            1e-8 * (1.0 + value.abs()),
        ));
        let traj = replay_controls(coeffs, &tree, &problem.chi0, &qp.control)?;
        let u_max = qp
            .control
            .u
            .iter()
            .flatten()
            .map(|v| v.amax())
            .fold(0.0, f64::max);
        let qsys = solve_optimality_bsvies(coeffs, &tree, &traj)?;
        let qst = check_stationarity(&qsys, coeffs);
        report.push(CheckResult::residual(
            "stationarity_qp",
            &qst.maximum_principle,
            1e-8 * (1.0 + u_max),
        ));
        let gap =
            fb.u.iter()
                .zip(&qp.control.u)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).amax()))
                .fold(0.0, f64::max);
        report.push(CheckResult::new(
            "feedback_matches_qp_control",
            gap,
            Bound::AtMost,
            1e-8 * (1.0 + u_max),
        ));
    }
    Ok(report)
}
