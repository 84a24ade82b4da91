use crate::error::{Error, Result};
use crate::grid::{SampledCoefficients, TimeGrid};
use crate::linalg::Mat;

/// One step of the lifted dynamics
///
/// ```text
/// χ_{k+1} = F χ_k + Gu u + (H χ_k + L u) ξ_k
/// ```
///
/// where `χ_k = (𝒳(s_k,s_k), …, 𝒳(s_N,s_k))` stacks the forecasts of the
/// state made at time `s_k`. The first block of `χ_k` is the state `X_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct LiftedStep {
    /// `Π(I + h 𝔸 E)`, shape `(N−k)n × (N−k+1)n`
    pub f: Mat,
    /// `h Π 𝔹`, shape `(N−k)n × m`
    pub gu: Mat,
    /// `Π ℂ E`, shape `(N−k)n × (N−k+1)n`
    pub h: Mat,
    /// `Π 𝔻`, shape `(N−k)n × m`
    pub l: Mat,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LiftedSystem {
    pub n: usize,
    pub m: usize,
    pub grid: TimeGrid,
    pub steps: Vec<LiftedStep>,
}

impl LiftedSystem {
    /// Length of `χ_k`.
    pub fn dim(&self, k: usize) -> usize {
        (self.grid.steps - k + 1) * self.n
    }

    /// Selector `E_k` extracting the first `n`-block of `χ_k`.
    pub fn first_block_selector(&self, k: usize) -> Mat {
        let mut e = Mat::zeros(self.n, self.dim(k));
        for i in 0..self.n {
            e[(i, i)] = 1.0;
        }
        e
    }
}

/// Assembles the lifted matrices from sampled kernels.
pub fn build_lifted(coeffs: &SampledCoefficients, grid: &TimeGrid) -> Result<LiftedSystem> {
    if coeffs.grid != *grid {
        return Err(Error::Shape(
            "coefficients were sampled on a different grid".into(),
        ));
    }
    coeffs.check_shapes()?;
    let (n, m, steps) = (coeffs.n, coeffs.m, grid.steps);
    let h = grid.h();
    let lifted_steps = (0..steps)
        .map(|k| {
            let rows = (steps - k) * n;
            let cols = rows + n;
            let mut f = Mat::zeros(rows, cols);
            let mut gu = Mat::zeros(rows, m);
            let mut hm = Mat::zeros(rows, cols);
            let mut l = Mat::zeros(rows, m);
            for (i, j) in ((k + 1)..=steps).enumerate() {
                let r0 = i * n;
                for p in 0..n {
                    f[(r0 + p, r0 + n + p)] = 1.0;
                }
                let mut fa = f.view_mut((r0, 0), (n, n));
                fa += coeffs.a(j, k) * h;
                gu.view_mut((r0, 0), (n, m))
                    .copy_from(&(coeffs.b(j, k) * h));
                hm.view_mut((r0, 0), (n, n)).copy_from(coeffs.c(j, k));
                l.view_mut((r0, 0), (n, m)).copy_from(coeffs.d(j, k));
            }
            LiftedStep { f, gu, h: hm, l }
        })
        .collect();
    Ok(LiftedSystem {
        n,
        m,
        grid: *grid,
        steps: lifted_steps,
    })
}
