//! Monte Carlo on the lifted dynamics.
//!
//! Each path draws its noise from a counter-based stream keyed by
//! `(seed, path, step)`, so results do not depend on how paths are
//! scheduled across threads. Cost statistics are reduced in a fixed
//! pairwise order for the same reason.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{Mat, Vector};
use crate::problem::DiscreteProblem;
use crate::riccati::LiftedSystem;

/// Largest horizon for which all `2^N` sign sequences are enumerated.
pub const MAX_EXHAUSTIVE_STEPS: usize = 20;

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DriverKind {
    /// Brownian increments `N(0, h)`.
    Gaussian,
    /// `±√h` with probability ½ each.
    TwoPoint,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseDriver {
    pub kind: DriverKind,
    pub seed: u64,
}

impl NoiseDriver {
    pub fn new(kind: DriverKind, seed: u64) -> Self {
        NoiseDriver { kind, seed }
    }

    /// Increment for `(path, step)`; a pure function of its arguments.
    pub fn variate(&self, path: u64, step: usize, h: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(path);
        rng.set_word_pos((step as u128) << 16);
        match self.kind {
            DriverKind::Gaussian => {
                let z: f64 = rng.sample(StandardNormal);
                z * h.sqrt()
            }
            DriverKind::TwoPoint => {
                if rng.random::<bool>() {
                    h.sqrt()
                } else {
                    -h.sqrt()
                }
            }
        }
    }
}

/// How many paths to run.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum PathCount {
    Sampled(usize),
    /// All `2^N` two-point sign sequences, equally weighted. Path `p` takes
    /// `+√h` at step `k` when bit `N−1−k` of `p` is set.
    Exhaustive,
}

/// Sign of the two-point increment at `step` on exhaustive path `path`.
pub fn exhaustive_sign(path: usize, step: usize, steps: usize) -> f64 {
    if (path >> (steps - 1 - step)) & 1 == 1 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimReport {
    pub paths: usize,
    pub exhaustive: bool,
    pub cost_mean: f64,
    /// Sample standard deviation over `√paths`.
    pub cost_stderr: f64,
    /// Root-mean-square control norm per step.
    pub control_rms: Vec<f64>,
    pub terminal_second_moment: f64,
    #[serde(skip)]
    pub path_costs: Vec<f64>,
}

/// Externally supplied controls, laid out `paths × steps × m`.
#[derive(Clone, Debug, PartialEq)]
pub struct ControlArray {
    pub paths: usize,
    pub steps: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl ControlArray {
    pub fn zeros(paths: usize, steps: usize, m: usize) -> Self {
        ControlArray {
            paths,
            steps,
            m,
            data: vec![0.0; paths * steps * m],
        }
    }

    pub fn get(&self, path: usize, step: usize) -> Vector {
        let at = (path * self.steps + step) * self.m;
        Vector::from_column_slice(&self.data[at..at + self.m])
    }

    pub fn set(&mut self, path: usize, step: usize, u: &Vector) {
        let at = (path * self.steps + step) * self.m;
        self.data[at..at + self.m].copy_from_slice(u.as_slice());
    }
}

/// One step of the auxiliary process:
/// `χ_{k+1} = F χ + Gu u + (H χ + L u) ξ`.
pub fn propagate_aux(
    chi: &Vector,
    u: &Vector,
    xi: f64,
    lifted: &LiftedSystem,
    k: usize,
) -> Result<Vector> {
    let step = lifted
        .steps
        .get(k)
        .ok_or_else(|| Error::Argument(format!("no transition out of step {k}")))?;
    if chi.len() != step.f.ncols() || u.len() != lifted.m {
        return Err(Error::Shape(format!(
            "step {k} expects χ of length {} and u of length {}, got {} and {}",
            step.f.ncols(),
            lifted.m,
            chi.len(),
            u.len()
        )));
    }
    let drift = &step.f * chi + &step.gu * u;
    let noise = &step.h * chi + &step.l * u;
    Ok(drift + noise * xi)
}

enum Controls<'a> {
    Feedback(&'a [Mat]),
    Open(&'a ControlArray),
}

struct PathOutcome {
    cost: f64,
    control_sq: Vec<f64>,
    terminal_sq: f64,
    controls: Option<Vec<f64>>,
}

fn run_path(
    problem: &DiscreteProblem,
    controls: &Controls<'_>,
    noise: impl Fn(usize) -> f64,
    path: usize,
    record: bool,
) -> Result<PathOutcome> {
    let lifted = &problem.lifted;
    let coeffs = &problem.coeffs;
    let (n, steps, h) = (lifted.n, lifted.grid.steps, lifted.grid.h());
    let mut chi = problem.chi0.values.clone();
    let mut running = 0.0;
    let mut control_sq = Vec::with_capacity(steps);
    let mut recorded = record.then(|| Vec::with_capacity(steps * lifted.m));
    for k in 0..steps {
        let u = match controls {
            Controls::Feedback(theta) => &theta[k] * &chi,
            Controls::Open(array) => array.get(path, k),
        };
        let x = chi.rows(0, n);
        running += h * (x.dot(&(&coeffs.q[k] * x)) + u.dot(&(&coeffs.r[k] * &u)));
        control_sq.push(u.norm_squared());
        if let Some(rec) = recorded.as_mut() {
            rec.extend(u.iter().copied());
        }
        chi = propagate_aux(&chi, &u, noise(k), lifted, k)?;
        if !running.is_finite() || chi.iter().any(|v| !v.is_finite()) {
            return Err(Error::Simulation { path, step: k });
        }
    }
    let terminal = chi.dot(&(&coeffs.g * &chi));
    let cost = 0.5 * (running + terminal);
    if !cost.is_finite() {
        return Err(Error::Simulation { path, step: steps });
    }
    Ok(PathOutcome {
        cost,
        control_sq,
        terminal_sq: chi.norm_squared(),
        controls: recorded,
    })
}

#[derive(Copy, Clone)]
struct Moments {
    count: f64,
    mean: f64,
    m2: f64,
}

fn merge(a: Moments, b: Moments) -> Moments {
    if a.count == 0.0 {
        return b;
    }
    if b.count == 0.0 {
        return a;
    }
    let count = a.count + b.count;
    let delta = b.mean - a.mean;
    Moments {
        count,
        mean: a.mean + delta * b.count / count,
        m2: a.m2 + b.m2 + delta * delta * a.count * b.count / count,
    }
}

/// Mean and centered second moment in a fixed pairwise order.
fn pairwise_moments(xs: &[f64]) -> Moments {
    const LEAF: usize = 64;
    if xs.len() <= LEAF {
        let mut acc = Moments {
            count: 0.0,
            mean: 0.0,
            m2: 0.0,
        };
        for &x in xs {
            acc = merge(
                acc,
                Moments {
                    count: 1.0,
                    mean: x,
                    m2: 0.0,
                },
            );
        }
        return acc;
    }
    let (l, r) = xs.split_at(xs.len() / 2);
    merge(pairwise_moments(l), pairwise_moments(r))
}

fn pairwise_mean(xs: &[f64]) -> f64 {
    pairwise_moments(xs).mean
}

fn run(
    problem: &DiscreteProblem,
    controls: Controls<'_>,
    driver: &NoiseDriver,
    paths: PathCount,
    record: bool,
) -> Result<(SimReport, Option<ControlArray>)> {
    let steps = problem.grid.steps;
    let h = problem.grid.h();
    let (count, exhaustive) = match paths {
        PathCount::Sampled(0) => return Err(Error::Argument("path count must be positive".into())),
        PathCount::Sampled(p) => (p, false),
        PathCount::Exhaustive => {
            if steps > MAX_EXHAUSTIVE_STEPS {
                return Err(Error::TooLarge {
                    dim: steps,
                    limit: MAX_EXHAUSTIVE_STEPS,
                });
            }
            (1usize << steps, true)
        }
    };
    match &controls {
        Controls::Feedback(theta) => {
            if theta.len() != steps
                || theta
                    .iter()
                    .enumerate()
                    .any(|(k, t)| t.shape() != (problem.lifted.m, problem.lifted.dim(k)))
            {
                return Err(Error::Shape(
                    "feedback operators do not match the grid".into(),
                ));
            }
        }
        Controls::Open(array) => {
            if array.paths != count || array.steps != steps || array.m != problem.lifted.m {
                return Err(Error::Shape(format!(
                    "control array is {}×{}×{}, expected {count}×{steps}×{}",
                    array.paths, array.steps, array.m, problem.lifted.m
                )));
            }
        }
    }

    let outcomes = (0..count)
        .into_par_iter()
        .map(|p| {
            if exhaustive {
                let noise = |k: usize| exhaustive_sign(p, k, steps) * h.sqrt();
                run_path(problem, &controls, noise, p, record)
            } else {
                let noise = |k: usize| driver.variate(p as u64, k, h);
                run_path(problem, &controls, noise, p, record)
            }
        })
        .collect::<Result<Vec<_>>>()?;

    let costs: Vec<f64> = outcomes.iter().map(|o| o.cost).collect();
    let stats = pairwise_moments(&costs);
    let stderr = if count > 1 {
        (stats.m2 / (count as f64 - 1.0)).sqrt() / (count as f64).sqrt()
    } else {
        0.0
    };
    let control_rms = (0..steps)
        .map(|k| {
            let sq: Vec<f64> = outcomes.iter().map(|o| o.control_sq[k]).collect();
            pairwise_mean(&sq).sqrt()
        })
        .collect();
    let terminal: Vec<f64> = outcomes.iter().map(|o| o.terminal_sq).collect();
    let recorded = record.then(|| ControlArray {
        paths: count,
        steps,
        m: problem.lifted.m,
        data: outcomes
            .iter()
            .flat_map(|o| o.controls.as_deref().unwrap_or_default().iter().copied())
            .collect(),
    });
    let report = SimReport {
        paths: count,
        exhaustive,
        cost_mean: stats.mean,
        cost_stderr: stderr,
        control_rms,
        terminal_second_moment: pairwise_mean(&terminal),
        path_costs: costs,
    };
    Ok((report, recorded))
}

/// Closed loop `u_k = Θ_k χ_k` started from the discretized free path.
pub fn simulate_closed_loop(
    problem: &DiscreteProblem,
    policy: &[Mat],
    driver: &NoiseDriver,
    paths: PathCount,
) -> Result<SimReport> {
    Ok(run(problem, Controls::Feedback(policy), driver, paths, false)?.0)
}

/// Like [`simulate_closed_loop`], also returning the controls applied on every path.
pub fn simulate_closed_loop_recorded(
    problem: &DiscreteProblem,
    policy: &[Mat],
    driver: &NoiseDriver,
    paths: PathCount,
) -> Result<(SimReport, ControlArray)> {
    let (report, controls) = run(problem, Controls::Feedback(policy), driver, paths, true)?;
    Ok((report, controls.expect("recording requested")))
}

/// Same cost accumulation with an explicit control array.
pub fn simulate_open_loop(
    problem: &DiscreteProblem,
    controls: &ControlArray,
    driver: &NoiseDriver,
    paths: PathCount,
) -> Result<SimReport> {
    Ok(run(problem, Controls::Open(controls), driver, paths, false)?.0)
}

/// Writes `path,cost` rows.
pub fn write_path_costs<W: std::io::Write>(report: &SimReport, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["path", "cost"])?;
    for (p, c) in report.path_costs.iter().enumerate() {
        w.write_record([p.to_string(), format!("{c:e}")])?;
    }
    w.flush()?;
    Ok(())
}
