//! Exact norms of a symmetric bilinear form on `(Rⁿ)^d` with the sup-norm
//! unit ball `[−1, 1]^D`:
//!
//! - `‖P‖_S  = max_{|x|∞ ≤ 1} |xᵀ P x|`
//! - `‖P‖_L² = max_{|x|∞, |y|∞ ≤ 1} |xᵀ P y|`
//!
//! The bilinear maximum is attained at sign vectors. The quadratic one is
//! attained at a sign vector only when `P` has no negative curvature along
//! coordinate faces, so it is found by enumerating the faces on which `±P`
//! is negative definite and maximizing the restricted concave quadratic.

use nalgebra::Cholesky;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, max_abs, Mat, Vector};

/// Largest dimension accepted by the enumerations.
pub const MAX_ENUMERATION_DIM: usize = 14;

/// Slack on the box constraint for interior stationary points.
const BOX_SLACK: f64 = 1e-12;

#[derive(Copy, Clone, Debug, PartialEq, Serialize)]
pub struct BilinearNorms {
    /// `‖P‖_S`
    pub quadratic: f64,
    /// `‖P‖_L²`
    pub bilinear: f64,
}

/// Iterates over sign vectors with the first entry fixed to `+1`
/// (the norms are invariant under `σ → −σ`).
fn for_each_sign(d: usize, mut f: impl FnMut(&Vector)) {
    if d == 0 {
        f(&Vector::zeros(0));
        return;
    }
    let mut sigma = Vector::from_element(d, 1.0);
    for bits in 0u64..(1u64 << (d - 1)) {
        for i in 1..d {
            sigma[i] = if bits >> (i - 1) & 1 == 1 { -1.0 } else { 1.0 };
        }
        f(&sigma);
    }
}

fn submatrix(p: &Mat, rows: &[usize], cols: &[usize]) -> Mat {
    Mat::from_fn(rows.len(), cols.len(), |i, j| p[(rows[i], cols[j])])
}

/// `max xᵀ P x` over the unit cube.
fn max_quadratic_on_cube(p: &Mat) -> f64 {
    let d = p.nrows();
    let mut best = f64::NEG_INFINITY;
    for_each_sign(d, |s| {
        let v = p * s;
        best = best.max(s.dot(&v));
    });

    // Faces with free coordinates F where P_FF ≺ 0; the family is closed
    // under taking subsets, so grow index sets in increasing order.
    let mut stack: Vec<Vec<usize>> = (0..d)
        .filter(|&i| p[(i, i)] < 0.0)
        .map(|i| vec![i])
        .collect();
    while let Some(free) = stack.pop() {
        let neg = -submatrix(p, &free, &free);
        let Some(chol) = Cholesky::new(neg) else {
            continue;
        };
        let bound: Vec<usize> = (0..d).filter(|i| !free.contains(i)).collect();
        if bound.is_empty() {
            best = best.max(0.0);
        } else {
            // z_F = K σ_B is the stationary point of the face; the value there
            // is σ_Bᵀ (P_BB + P_BF K) σ_B.
            let k = chol.solve(&submatrix(p, &free, &bound));
            let reduced = submatrix(p, &bound, &bound) + submatrix(p, &bound, &free) * &k;
            for_each_sign(bound.len(), |s| {
                let z = &k * s;
                if z.iter().all(|v| v.abs() <= 1.0 + BOX_SLACK) {
                    best = best.max(s.dot(&(&reduced * s)));
                }
            });
        }
        let last = *free.last().expect("non-empty face");
        for i in (last + 1)..d {
            if p[(i, i)] < 0.0 {
                let mut grown = free.clone();
                grown.push(i);
                stack.push(grown);
            }
        }
    }
    best
}

/// Computes `(‖P‖_S, ‖P‖_L²)` by exhaustive enumeration.
pub fn bilinear_norms(p: &Mat) -> Result<BilinearNorms> {
    let d = p.nrows();
    if p.ncols() != d {
        return Err(Error::Shape(format!(
            "{}x{} matrix is not square",
            d,
            p.ncols()
        )));
    }
    if d > MAX_ENUMERATION_DIM {
        return Err(Error::TooLarge {
            dim: d,
            limit: MAX_ENUMERATION_DIM,
        });
    }
    if asymmetry(p) > 1e-12 * (1.0 + max_abs(p)) {
        return Err(Error::Argument("matrix is not symmetric".into()));
    }
    if d == 0 {
        return Ok(BilinearNorms {
            quadratic: 0.0,
            bilinear: 0.0,
        });
    }
    let mut bilinear = 0.0_f64;
    for_each_sign(d, |s| {
        let v = p * s;
        bilinear = bilinear.max(v.iter().map(|x| x.abs()).sum());
    });
    let quadratic = max_quadratic_on_cube(p)
        .max(max_quadratic_on_cube(&-p))
        .max(0.0);
    Ok(BilinearNorms {
        quadratic,
        bilinear,
    })
}
