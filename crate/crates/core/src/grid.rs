//! Uniform time grids and the coefficient / path tables sampled on them.
//!
//! Path vectors are stored time-major: the block for node `s_j` holds the
//! `n` state components contiguously, so restricting a path to a later
//! start index is a prefix drop.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{symmetrized, Mat, Vector};
use crate::model::{Coefficient, FreePath, ProblemSpec};

#[derive(Copy, Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "N")]
    pub steps: usize,
}

impl TimeGrid {
    pub fn h(&self) -> f64 {
        (self.t_end - self.t0) / self.steps as f64
    }

    /// Node `s_k`; the last node is pinned to `T` rather than accumulated.
    pub fn node(&self, k: usize) -> f64 {
        if k >= self.steps {
            self.t_end
        } else {
            self.t0 + k as f64 * self.h()
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.steps).map(|k| self.node(k)).collect()
    }

    /// Grid on `[s_k, T]` with the same step.
    pub fn restrict(&self, k: usize) -> TimeGrid {
        TimeGrid {
            t0: self.node(k),
            t_end: self.t_end,
            steps: self.steps - k,
        }
    }
}

pub fn build_grid(t0: f64, t_end: f64, steps: usize) -> Result<TimeGrid> {
    if steps == 0 {
        return Err(Error::Argument("grid needs at least one step".into()));
    }
    if !(t0 < t_end) || !t0.is_finite() || !t_end.is_finite() {
        return Err(Error::Argument(format!("invalid horizon [{t0}, {t_end}]")));
    }
    Ok(TimeGrid { t0, t_end, steps })
}

/// Grid path `(x(s_k), …, x(s_N))` stacked block-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscretePath {
    pub start: usize,
    pub n: usize,
    pub values: Vector,
}

impl DiscretePath {
    pub fn new(start: usize, n: usize, values: Vector) -> Result<Self> {
        if n == 0 || !values.len().is_multiple_of(n) {
            return Err(Error::Shape(format!(
                "path of length {} is not a whole number of {n}-blocks",
                values.len()
            )));
        }
        Ok(DiscretePath { start, n, values })
    }

    pub fn blocks(&self) -> usize {
        self.values.len() / self.n
    }

    /// State at node `s_{start + i}`.
    pub fn block(&self, i: usize) -> Vector {
        self.values.rows(i * self.n, self.n).into_owned()
    }

    /// `max_j |x(s_j)|_∞`.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }

    /// Restriction to the next start index (first block dropped).
    pub fn restrict(&self) -> Result<DiscretePath> {
        if self.blocks() <= 1 {
            return Err(Error::Argument(
                "cannot restrict a single-block path".into(),
            ));
        }
        Ok(DiscretePath {
            start: self.start + 1,
            n: self.n,
            values: self
                .values
                .rows(self.n, self.values.len() - self.n)
                .into_owned(),
        })
    }
}

/// Samples the free path at nodes `s_k, …, s_N`.
pub fn discretize_path(path: &FreePath, grid: &TimeGrid, k: usize) -> Result<DiscretePath> {
    let n = path
        .dim()
        .ok_or_else(|| Error::Argument("free path has no samples".into()))?;
    if k > grid.steps {
        return Err(Error::Argument(format!(
            "start index {k} beyond grid with {} steps",
            grid.steps
        )));
    }
    let mut values = Vec::with_capacity((grid.steps - k + 1) * n);
    for j in k..=grid.steps {
        let x = path.at(grid.node(j))?;
        if x.len() != n {
            return Err(Error::Shape(
                "free path samples have inconsistent dimension".into(),
            ));
        }
        values.extend(x);
    }
    DiscretePath::new(k, n, Vector::from_vec(values))
}

/// Kernels tabulated at `(s_j, s_k)` for `k < N`, `j = k..=N`, and weights at
/// the left endpoints `s_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledCoefficients {
    pub n: usize,
    pub m: usize,
    pub grid: TimeGrid,
    /// `a[k][j - k] = A(s_j, s_k)`
    pub a: Vec<Vec<Mat>>,
    pub b: Vec<Vec<Mat>>,
    pub c: Vec<Vec<Mat>>,
    pub d: Vec<Vec<Mat>>,
    /// `q[k] = Q(s_k)` for `k < N`
    pub q: Vec<Mat>,
    pub r: Vec<Mat>,
    pub g: Mat,
}

impl SampledCoefficients {
    pub fn steps(&self) -> usize {
        self.grid.steps
    }

    pub fn h(&self) -> f64 {
        self.grid.h()
    }

    pub fn a(&self, j: usize, k: usize) -> &Mat {
        &self.a[k][j - k]
    }
    pub fn b(&self, j: usize, k: usize) -> &Mat {
        &self.b[k][j - k]
    }
    pub fn c(&self, j: usize, k: usize) -> &Mat {
        &self.c[k][j - k]
    }
    pub fn d(&self, j: usize, k: usize) -> &Mat {
        &self.d[k][j - k]
    }

    /// Builds a table from a generator `f(which, j, k)`; used for random
    /// grid-level instances that have no closed-form kernel.
    pub fn from_fn(
        n: usize,
        m: usize,
        grid: TimeGrid,
        mut kernel: impl FnMut(Coefficient, usize, usize) -> Mat,
        q: Vec<Mat>,
        r: Vec<Mat>,
        g: Mat,
    ) -> Result<Self> {
        let steps = grid.steps;
        let mut table = |which| -> Vec<Vec<Mat>> {
            (0..steps)
                .map(|k| (k..=steps).map(|j| kernel(which, j, k)).collect())
                .collect()
        };
        let coeffs = SampledCoefficients {
            n,
            m,
            grid,
            a: table(Coefficient::A),
            b: table(Coefficient::B),
            c: table(Coefficient::C),
            d: table(Coefficient::D),
            q: q.into_iter().map(symmetrized).collect(),
            r: r.into_iter().map(symmetrized).collect(),
            g: symmetrized(g),
        };
        coeffs.check_shapes()?;
        Ok(coeffs)
    }

    pub fn check_shapes(&self) -> Result<()> {
        let (n, m, steps) = (self.n, self.m, self.steps());
        let bad = |what: &str| Err(Error::Shape(format!("sampled {what} has wrong shape")));
        for (what, t, cols) in [
            ("A", &self.a, n),
            ("B", &self.b, m),
            ("C", &self.c, n),
            ("D", &self.d, m),
        ] {
            if t.len() != steps
                || t.iter().enumerate().any(|(k, col)| {
                    col.len() != steps - k + 1 || col.iter().any(|x| x.shape() != (n, cols))
                })
            {
                return bad(what);
            }
        }
        if self.q.len() != steps || self.q.iter().any(|x| x.shape() != (n, n)) {
            return bad("Q");
        }
        if self.r.len() != steps || self.r.iter().any(|x| x.shape() != (m, m)) {
            return bad("R");
        }
        if self.g.shape() != (n, n) {
            return bad("G");
        }
        Ok(())
    }

    /// Data of the subproblem on `[s_k, T]`.
    pub fn restrict(&self, k: usize) -> SampledCoefficients {
        SampledCoefficients {
            n: self.n,
            m: self.m,
            grid: self.grid.restrict(k),
            a: self.a[k..].to_vec(),
            b: self.b[k..].to_vec(),
            c: self.c[k..].to_vec(),
            d: self.d[k..].to_vec(),
            q: self.q[k..].to_vec(),
            r: self.r[k..].to_vec(),
            g: self.g.clone(),
        }
    }

    pub fn b_vanishes(&self) -> bool {
        self.b.iter().flatten().all(|x| x.iter().all(|v| *v == 0.0))
    }
}

/// Tabulates every kernel and weight of `spec` on `grid` (left-endpoint
/// convention). Fractional kernels are clamped at lag `h` on the diagonal.
pub fn sample_spec(spec: &ProblemSpec, grid: &TimeGrid) -> Result<SampledCoefficients> {
    let steps = grid.steps;
    let h = grid.h();
    let nodes = grid.nodes();
    let table = |which: Coefficient| -> Result<Vec<Vec<Mat>>> {
        (0..steps)
            .map(|k| {
                (k..=steps)
                    .map(|j| spec.kernel_value(which, nodes[j], nodes[k], Some(h)))
                    .collect()
            })
            .collect()
    };
    let coeffs = SampledCoefficients {
        n: spec.n,
        m: spec.m,
        grid: *grid,
        a: table(Coefficient::A)?,
        b: table(Coefficient::B)?,
        c: table(Coefficient::C)?,
        d: table(Coefficient::D)?,
        q: (0..steps)
            .map(|k| symmetrized(spec.q.at(nodes[k])))
            .collect(),
        r: (0..steps)
            .map(|k| symmetrized(spec.r.at(nodes[k])))
            .collect(),
        g: symmetrized(spec.g.clone()),
    };
    coeffs.check_shapes()?;
    Ok(coeffs)
}
