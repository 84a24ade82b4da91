//! Binary scenario tree for the two-point driver `ξ_k = ±√h`.
//!
//! A node at depth `k` is an index `σ ∈ 0..2^k`; its children are `2σ`
//! (`ξ_k = −√h`) and `2σ + 1` (`ξ_k = +√h`). A leaf `ω` therefore visits
//! node `ω >> (N − k)` at depth `k`, and the sign drawn at step `l` is bit
//! `N − 1 − l` of `ω`. This matches the path numbering used by exhaustive
//! simulation.

use crate::error::{Error, Result};
use crate::linalg::Vector;

/// Deepest tree the oracle accepts.
pub const MAX_DEPTH: usize = 12;

/// Values at every node of one depth, indexed by node.
pub type NodeField = Vec<Vector>;

#[derive(Copy, Clone, Debug, PartialEq)]
pub struct ScenarioTree {
    pub depth: usize,
    pub h: f64,
}

impl ScenarioTree {
    pub fn new(depth: usize, h: f64) -> Result<Self> {
        if depth > MAX_DEPTH {
            return Err(Error::TooLarge {
                dim: depth,
                limit: MAX_DEPTH,
            });
        }
        if !(h > 0.0) {
            return Err(Error::Argument(format!("step must be positive, got {h}")));
        }
        Ok(ScenarioTree { depth, h })
    }

    pub fn width(&self, k: usize) -> usize {
        1 << k
    }

    pub fn node_count(&self) -> usize {
        (1 << (self.depth + 1)) - 1
    }

    /// `ξ_step` on the way to node `node` at depth `level > step`.
    pub fn xi(&self, level: usize, node: usize, step: usize) -> f64 {
        debug_assert!(step < level);
        if (node >> (level - 1 - step)) & 1 == 1 {
            self.h.sqrt()
        } else {
            -self.h.sqrt()
        }
    }

    /// Ancestor at depth `k` of `node` at depth `level`.
    pub fn ancestor(&self, level: usize, node: usize, k: usize) -> usize {
        node >> (level - k)
    }

    /// `E_k` of a field living at depth `level ≥ k`: averages each block of
    /// `2^(level−k)` descendants.
    pub fn cond_expect(&self, field: &[Vector], level: usize, k: usize) -> NodeField {
        debug_assert_eq!(field.len(), 1 << level);
        let block = 1 << (level - k);
        field
            .chunks(block)
            .map(|c| {
                let mut acc = c[0].clone();
                for v in &c[1..] {
                    acc += v;
                }
                acc / block as f64
            })
            .collect()
    }

    /// Views a depth-`k` field as a depth-`level` field.
    pub fn lift(&self, field: &[Vector], k: usize, level: usize) -> NodeField {
        let block = 1 << (level - k);
        field
            .iter()
            .flat_map(|v| std::iter::repeat_n(v.clone(), block))
            .collect()
    }

    /// Martingale coefficient at depth `r` of a depth-`r+1` field:
    /// `v = E_r v + z ξ_r` with `z = (v₊ − v₋) / (2√h)`.
    pub fn mcoeff(&self, field: &[Vector]) -> NodeField {
        let scale = 0.5 / self.h.sqrt();
        field.chunks(2).map(|c| (&c[1] - &c[0]) * scale).collect()
    }

    /// `z_r` with `E_{r+1} v = E_r v + z_r ξ_r`, for a field at depth `level > r`.
    pub fn mcoeff_at(&self, field: &[Vector], level: usize, r: usize) -> NodeField {
        self.mcoeff(&self.cond_expect(field, level, r + 1))
    }

    /// Node label as a sign string such as `"+-+"`; the root is `""`.
    pub fn sign_string(&self, level: usize, node: usize) -> String {
        (0..level)
            .map(|l| {
                if (node >> (level - 1 - l)) & 1 == 1 {
                    '+'
                } else {
                    '-'
                }
            })
            .collect()
    }
}

pub fn zero_field(width: usize, dim: usize) -> NodeField {
    vec![Vector::zeros(dim); width]
}

pub fn max_abs_field(field: &[Vector]) -> (f64, usize) {
    field
        .iter()
        .enumerate()
        .map(|(i, v)| (v.amax(), i))
        .fold(
            (0.0, 0),
            |best, cur| if cur.0 > best.0 { cur } else { best },
        )
}
