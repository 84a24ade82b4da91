//! Versioned JSON encoding of [`RiccatiSolution`].
//!
//! Every floating-point payload is the base64 encoding of little-endian
//! IEEE-754 doubles, so a round trip is bit-exact. `P_k` is stored as its
//! lower triangle in row-major order, `Θ_k` as a full row-major matrix.

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::RiccatiSolution;
use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::linalg::Mat;

pub const SOLUTION_FORMAT_VERSION: u32 = 1;
const ENCODING: &str = "base64-f64le";

#[derive(Serialize, Deserialize)]
struct GridDoc {
    t0: String,
    #[serde(rename = "T")]
    t_end: String,
    #[serde(rename = "N")]
    steps: usize,
}

#[derive(Serialize, Deserialize)]
struct SolutionDoc {
    version: u32,
    encoding: String,
    n: usize,
    m: usize,
    grid: GridDoc,
    #[serde(rename = "P")]
    p: Vec<String>,
    #[serde(rename = "Theta")]
    theta: Vec<String>,
    regularity_margin: String,
}

fn encode(values: &[f64]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    STANDARD.encode(bytes)
}

fn decode(s: &str) -> Result<Vec<f64>> {
    let bytes = STANDARD
        .decode(s)
        .map_err(|e| Error::Config(format!("bad base64 payload: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Config(
            "payload is not a whole number of doubles".into(),
        ));
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

fn decode_scalar(s: &str) -> Result<f64> {
    match decode(s)?.as_slice() {
        [v] => Ok(*v),
        _ => Err(Error::Config("expected a single encoded double".into())),
    }
}

fn lower_triangle(m: &Mat) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|i| (0..=i).map(move |j| m[(i, j)]))
        .collect()
}

fn row_major(m: &Mat) -> Vec<f64> {
    (0..m.nrows())
        .flat_map(|i| (0..m.ncols()).map(move |j| m[(i, j)]))
        .collect()
}

pub fn write_solution(sol: &RiccatiSolution) -> Result<String> {
    let doc = SolutionDoc {
        version: SOLUTION_FORMAT_VERSION,
        encoding: ENCODING.into(),
        n: sol.n,
        m: sol.m,
        grid: GridDoc {
            t0: encode(&[sol.grid.t0]),
            t_end: encode(&[sol.grid.t_end]),
            steps: sol.grid.steps,
        },
        p: sol.p.iter().map(|p| encode(&lower_triangle(p))).collect(),
        theta: sol.theta.iter().map(|t| encode(&row_major(t))).collect(),
        regularity_margin: encode(&[sol.regularity_margin]),
    };
    Ok(serde_json::to_string_pretty(&doc)?)
}

pub fn read_solution(json: &str) -> Result<RiccatiSolution> {
    let doc: SolutionDoc = serde_json::from_str(json)?;
    if doc.version != SOLUTION_FORMAT_VERSION {
        return Err(Error::Config(format!(
            "unsupported solution version {} (expected {SOLUTION_FORMAT_VERSION})",
            doc.version
        )));
    }
    if doc.encoding != ENCODING {
        return Err(Error::Config(format!(
            "unsupported encoding {}",
            doc.encoding
        )));
    }
    let grid = TimeGrid {
        t0: decode_scalar(&doc.grid.t0)?,
        t_end: decode_scalar(&doc.grid.t_end)?,
        steps: doc.grid.steps,
    };
    let steps = grid.steps;
    if doc.p.len() != steps + 1 || doc.theta.len() != steps {
        return Err(Error::Shape(
            "solution has the wrong number of steps".into(),
        ));
    }
    let dim = |k: usize| (steps - k + 1) * doc.n;
    let p = doc
        .p
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let d = dim(k);
            let tri = decode(s)?;
            if tri.len() != d * (d + 1) / 2 {
                return Err(Error::Shape(format!("P_{k} payload has wrong length")));
            }
            let mut m = Mat::zeros(d, d);
            let mut it = tri.into_iter();
            for i in 0..d {
                for j in 0..=i {
                    let v = it.next().expect("length checked");
                    m[(i, j)] = v;
                    m[(j, i)] = v;
                }
            }
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let theta = doc
        .theta
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let d = dim(k);
            let v = decode(s)?;
            if v.len() != doc.m * d {
                return Err(Error::Shape(format!("Theta_{k} payload has wrong length")));
            }
            Ok(Mat::from_row_slice(doc.m, d, &v))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RiccatiSolution {
        n: doc.n,
        m: doc.m,
        grid,
        p,
        theta,
        regularity_margin: decode_scalar(&doc.regularity_margin)?,
    })
}
