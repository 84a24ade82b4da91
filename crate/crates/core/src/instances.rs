//! Random problem instances satisfying the standard condition: kernels
//! tabulated at grid nodes with entries uniform in `[−r, r]`, `R = I + diag(U[0,1])`,
//! and random positive semidefinite `Q_k`, `G`.

use rand::Rng;

use crate::error::Result;
use crate::grid::build_grid;
use crate::linalg::Mat;
use crate::model::{FreePath, KernelSpec, PathSample, ProblemSpec, WeightSpec};

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct InstanceShape {
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    pub t0: f64,
    pub t_end: f64,
    /// Half-width of the kernel entry distribution.
    pub kernel_range: f64,
    /// Force `B ≡ 0`.
    pub zero_b: bool,
}

impl InstanceShape {
    pub fn new(n: usize, m: usize, steps: usize) -> Self {
        InstanceShape {
            n,
            m,
            steps,
            t0: 0.0,
            t_end: 1.0,
            kernel_range: 1.0,
            zero_b: false,
        }
    }
}

fn uniform(rng: &mut impl Rng, rows: usize, cols: usize, range: f64) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.random_range(-range..=range))
}

/// `M Mᵀ / n` with uniform entries, which is positive semidefinite.
pub fn random_psd(rng: &mut impl Rng, n: usize) -> Mat {
    let m = uniform(rng, n, n, 1.0);
    &m * m.transpose() / n.max(1) as f64
}

pub fn random_symmetric(rng: &mut impl Rng, n: usize) -> Mat {
    let m = uniform(rng, n, n, 1.0);
    (&m + m.transpose()) * 0.5
}

/// Draws an instance whose kernels are sampled exactly at the nodes of the
/// `steps`-step grid on `[t0, T]`.
pub fn random_instance(rng: &mut impl Rng, shape: &InstanceShape) -> Result<ProblemSpec> {
    let grid = build_grid(shape.t0, shape.t_end, shape.steps)?;
    let times = grid.nodes();
    let (n, m) = (shape.n, shape.m);
    let mut table = |rows: usize, cols: usize, zero: bool| -> KernelSpec {
        let values = times
            .iter()
            .map(|_| {
                times
                    .iter()
                    .map(|_| {
                        if zero {
                            Mat::zeros(rows, cols)
                        } else {
                            uniform(rng, rows, cols, shape.kernel_range)
                        }
                    })
                    .collect()
            })
            .collect();
        KernelSpec::Tabulated {
            times: times.clone(),
            values,
        }
    };
    let a = table(n, n, false);
    let b = table(n, m, shape.zero_b);
    let c = table(n, n, false);
    let d = table(n, m, false);
    let q = WeightSpec::Tabulated {
        times: times.clone(),
        values: times.iter().map(|_| random_psd(rng, n)).collect(),
    };
    let r = WeightSpec::Constant(Mat::from_diagonal(&nalgebra::DVector::from_fn(
        m,
        |_, _| 1.0 + rng.random_range(0.0..1.0),
    )));
    let g = random_psd(rng, n);
    let free_path = FreePath {
        samples: times
            .iter()
            .map(|&t| PathSample {
                t,
                x: (0..n).map(|_| rng.random_range(-1.0..=1.0)).collect(),
            })
            .collect(),
    };
    Ok(ProblemSpec {
        n,
        m,
        t0: shape.t0,
        t_end: shape.t_end,
        a,
        b,
        c,
        d,
        q,
        r,
        g,
        free_path,
    })
}
