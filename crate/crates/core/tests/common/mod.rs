#![allow(dead_code)]

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use volterra_lq::instances::{random_instance, InstanceShape};
use volterra_lq::linalg::Mat;
use volterra_lq::model::{FreePath, KernelSpec, ProblemSpec, WeightSpec};
use volterra_lq::{DiscreteProblem, RiccatiSolution};

pub fn s(v: f64) -> Mat {
    Mat::from_element(1, 1, v)
}

/// Scalar constant-coefficient problem on `[0, t_end]` with constant path `x`.
#[allow(clippy::too_many_arguments)]
pub fn scalar_spec(
    [a, b, c, d]: [f64; 4],
    q: f64,
    r: f64,
    g: f64,
    x: f64,
    t_end: f64,
) -> ProblemSpec {
    ProblemSpec {
        n: 1,
        m: 1,
        t0: 0.0,
        t_end,
        a: KernelSpec::constant(s(a)),
        b: KernelSpec::constant(s(b)),
        c: KernelSpec::constant(s(c)),
        d: KernelSpec::constant(s(d)),
        q: WeightSpec::Constant(s(q)),
        r: WeightSpec::Constant(s(r)),
        g: s(g),
        free_path: FreePath::constant(&[x]),
    }
}

pub fn benchmark_spec() -> ProblemSpec {
    scalar_spec([0.3, 0.5, 0.2, 0.4], 1.0, 1.0, 1.0, 1.0, 1.0)
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_problem(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    steps: usize,
    zero_b: bool,
) -> (ProblemSpec, DiscreteProblem) {
    let mut shape = InstanceShape::new(n, m, steps);
    shape.zero_b = zero_b;
    let spec = random_instance(rng, &shape).expect("instance");
    let problem = DiscreteProblem::from_spec(&spec, steps).expect("problem");
    (spec, problem)
}

pub fn dp(problem: &DiscreteProblem) -> RiccatiSolution {
    volterra_lq::solve_dp(&problem.lifted, &problem.coeffs).expect("dp solve")
}

pub fn max_diff(a: &Mat, b: &Mat) -> f64 {
    assert_eq!(a.shape(), b.shape());
    (a - b).amax()
}
