//! Linear-quadratic control of stochastic Volterra integral equations.
//!
//! The crate discretizes a controlled Volterra equation on a uniform grid,
//! solves the path-dependent Riccati equation for the optimal causal
//! feedback, simulates the closed loop, and checks the result against an
//! exact scenario-tree solver.

#![allow(clippy::needless_range_loop, clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod error;
pub mod grid;
pub mod instances;
pub mod linalg;
pub mod model;
pub mod oracle;
pub mod problem;
pub mod riccati;
pub mod sde_reduce;
pub mod simulate;

pub use error::{Error, Result};
pub use grid::{
    build_grid, discretize_path, sample_spec, DiscretePath, SampledCoefficients, TimeGrid,
};
pub use model::{
    eval_kernel, validate_spec, Coefficient, KernelSpec, ProblemSpec, ValidationMode,
    ValidationReport,
};
pub use problem::DiscreteProblem;
pub use riccati::{feedback_control, picard_solve, solve_dp, value_at, RiccatiSolution};
