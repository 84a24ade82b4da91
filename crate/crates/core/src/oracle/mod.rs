//! Exact solver on the binary scenario tree of the two-point driver.
//!
//! Because every value function is quadratic, the discrete problem only sees
//! the first two moments of the noise, so the tree optimum coincides with the
//! Riccati value for the Gaussian model. The tree is small enough to solve the
//! adapted control problem directly and to evaluate the adjoint equations
//! node by node.

mod bsvie;
mod checks;
mod qp;
mod suite;
mod trajectory;
mod tree;
mod type3;

pub use bsvie::{solve_optimality_bsvies, BsvieSystem};
pub use checks::{
    adjoint_equation_residual, check_dual_representation, check_stationarity, m_solution_residual,
    type3_representation_residual, Residual, StationarityReport,
};
pub use qp::{assemble_qp, solve_adapted_qp, QpSolution, QuadraticForm, MAX_QP_VARIABLES};
pub use suite::{qp_convexity, run_identity_suite, Bound, CheckResult, OracleReport};
pub use trajectory::{
    replay_controls, replay_feedback, trajectory_cost, AdaptedControl, Trajectory,
};
pub use tree::{max_abs_field, zero_field, NodeField, ScenarioTree, MAX_DEPTH};
pub use type3::{solve_type3, Type3Solution};
