use crate::error::{Error, Result};
use crate::grid::{
    build_grid, discretize_path, sample_spec, DiscretePath, SampledCoefficients, TimeGrid,
};
use crate::model::ProblemSpec;
use crate::riccati::{build_lifted, LiftedSystem};

/// A problem instance brought onto a grid: sampled data, lifted dynamics
/// and the initial forecast vector `χ_0`.
#[derive(Clone, Debug)]
pub struct DiscreteProblem {
    pub grid: TimeGrid,
    pub coeffs: SampledCoefficients,
    pub lifted: LiftedSystem,
    pub chi0: DiscretePath,
}

impl DiscreteProblem {
    pub fn from_spec(spec: &ProblemSpec, steps: usize) -> Result<Self> {
        let grid = build_grid(spec.t0, spec.t_end, steps)?;
        let coeffs = sample_spec(spec, &grid)?;
        let chi0 = discretize_path(&spec.free_path, &grid, 0)?;
        Self::from_parts(coeffs, chi0)
    }

    pub fn from_parts(coeffs: SampledCoefficients, chi0: DiscretePath) -> Result<Self> {
        let grid = coeffs.grid;
        if chi0.start != 0 || chi0.n != coeffs.n || chi0.values.len() != (grid.steps + 1) * coeffs.n
        {
            return Err(Error::Shape(
                "initial path does not match the sampled coefficients".into(),
            ));
        }
        let lifted = build_lifted(&coeffs, &grid)?;
        Ok(DiscreteProblem {
            grid,
            coeffs,
            lifted,
            chi0,
        })
    }
}
