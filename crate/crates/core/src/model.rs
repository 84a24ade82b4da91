//! Continuous-time problem instances: coefficient kernels on the lower
//! triangle `t0 ≤ τ ≤ s ≤ T`, quadratic weights and the free path.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{min_eigenvalue, Mat};

/// Eigenvalue slack allowed for the semidefinite weights `Q` and `G`.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Slack on the triangle bounds, relative to the horizon length.
const DOMAIN_SLACK: f64 = 1e-12;

pub(crate) mod matrix_serde {
    //! Matrices travel as nested row arrays; a bare number is accepted for 1×1.

    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::linalg::Mat;

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Scalar(f64),
        Rows(Vec<Vec<f64>>),
    }

    fn to_repr(m: &Mat) -> Repr {
        Repr::Rows(
            (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
                .collect(),
        )
    }

    fn from_repr<E: serde::de::Error>(r: Repr) -> Result<Mat, E> {
        match r {
            Repr::Scalar(v) => Ok(Mat::from_element(1, 1, v)),
            Repr::Rows(rows) => {
                let nrows = rows.len();
                let ncols = rows.first().map_or(0, Vec::len);
                if rows.iter().any(|r| r.len() != ncols) {
                    return Err(E::custom("matrix rows have unequal lengths"));
                }
                Ok(Mat::from_fn(nrows, ncols, |i, j| rows[i][j]))
            }
        }
    }

    pub fn serialize<S: Serializer>(m: &Mat, s: S) -> Result<S::Ok, S::Error> {
        to_repr(m).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Mat, D::Error> {
        from_repr(Repr::deserialize(d)?)
    }

    pub mod list {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[Mat], s: S) -> Result<S::Ok, S::Error> {
            ms.iter().map(to_repr).collect::<Vec<_>>().serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Mat>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(from_repr)
                .collect()
        }
    }

    pub mod table {
        use super::*;

        pub fn serialize<S: Serializer>(ms: &[Vec<Mat>], s: S) -> Result<S::Ok, S::Error> {
            ms.iter()
                .map(|row| row.iter().map(to_repr).collect::<Vec<_>>())
                .collect::<Vec<_>>()
                .serialize(s)
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<Vec<Mat>>, D::Error> {
            Vec::<Vec<Repr>>::deserialize(d)?
                .into_iter()
                .map(|row| row.into_iter().map(from_repr).collect())
                .collect()
        }
    }
}

/// Polynomial with coefficients in ascending degree.
fn horner(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeparableTerm {
    #[serde(with = "matrix_serde")]
    pub coefficient: Mat,
    /// Factor in the first time argument `s`.
    pub s_poly: Vec<f64>,
    /// Factor in the second time argument `τ`.
    pub tau_poly: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentialTerm {
    #[serde(with = "matrix_serde")]
    pub coefficient: Mat,
    pub rate: f64,
}

/// Closed vocabulary of two-time coefficient kernels.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelSpec {
    Constant {
        #[serde(with = "matrix_serde")]
        value: Mat,
    },
    /// `Σ Mᵢ fᵢ(s) gᵢ(τ)` with polynomial factors.
    SeparableSum { terms: Vec<SeparableTerm> },
    /// `Σ Mᵢ exp(−λᵢ (s − τ))`.
    ConvolutionExponentialSum { terms: Vec<ExponentialTerm> },
    /// `M (s − τ)^(α − 1)`, singular on the diagonal when `α < 1`.
    ///
    /// Lags below `min_lag` are clamped to it. When sampled on a grid the
    /// clamp defaults to the grid step.
    ConvolutionFractional {
        alpha: f64,
        #[serde(with = "matrix_serde")]
        scale: Mat,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        min_lag: Option<f64>,
    },
    /// Values on a square table `times × times` (row = s, column = τ),
    /// bilinearly interpolated.
    Tabulated {
        times: Vec<f64>,
        #[serde(with = "matrix_serde::table")]
        values: Vec<Vec<Mat>>,
    },
}

fn bracket(times: &[f64], x: f64) -> (usize, f64) {
    debug_assert!(times.len() >= 2);
    let last = times.len() - 1;
    if x <= times[0] {
        return (0, 0.0);
    }
    if x >= times[last] {
        return (last - 1, 1.0);
    }
    // first index with times[i] > x
    let upper = times.partition_point(|&t| t <= x);
    let i = upper - 1;
    let w = (x - times[i]) / (times[i + 1] - times[i]);
    (i, w)
}

impl KernelSpec {
    pub fn constant(value: Mat) -> Self {
        KernelSpec::Constant { value }
    }

    pub fn zero(rows: usize, cols: usize) -> Self {
        KernelSpec::Constant {
            value: Mat::zeros(rows, cols),
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            KernelSpec::Constant { .. } => "constant",
            KernelSpec::SeparableSum { .. } => "separable-sum",
            KernelSpec::ConvolutionExponentialSum { .. } => "convolution-exponential-sum",
            KernelSpec::ConvolutionFractional { .. } => "convolution-fractional",
            KernelSpec::Tabulated { .. } => "tabulated",
        }
    }

    /// `(rows, cols)` of the kernel values, if determinable.
    pub fn shape(&self) -> Option<(usize, usize)> {
        match self {
            KernelSpec::Constant { value } => Some(value.shape()),
            KernelSpec::SeparableSum { terms } => terms.first().map(|t| t.coefficient.shape()),
            KernelSpec::ConvolutionExponentialSum { terms } => {
                terms.first().map(|t| t.coefficient.shape())
            }
            KernelSpec::ConvolutionFractional { scale, .. } => Some(scale.shape()),
            KernelSpec::Tabulated { values, .. } => {
                values.first().and_then(|r| r.first()).map(|m| m.shape())
            }
        }
    }

    /// Kernels depending on `(s, τ)` only through `s − τ`.
    pub fn is_convolution(&self) -> bool {
        matches!(
            self,
            KernelSpec::Constant { .. }
                | KernelSpec::ConvolutionExponentialSum { .. }
                | KernelSpec::ConvolutionFractional { .. }
        )
    }

    /// Fractional kernels break boundedness/differentiability near the diagonal.
    pub fn nonconforming(&self) -> bool {
        matches!(self, KernelSpec::ConvolutionFractional { .. })
    }

    pub fn is_identically_zero(&self) -> bool {
        match self {
            KernelSpec::Constant { value } => value.iter().all(|v| *v == 0.0),
            KernelSpec::SeparableSum { terms } => terms
                .iter()
                .all(|t| t.coefficient.iter().all(|v| *v == 0.0)),
            KernelSpec::ConvolutionExponentialSum { terms } => terms
                .iter()
                .all(|t| t.coefficient.iter().all(|v| *v == 0.0)),
            KernelSpec::ConvolutionFractional { scale, .. } => scale.iter().all(|v| *v == 0.0),
            KernelSpec::Tabulated { values, .. } => {
                values.iter().flatten().all(|m| m.iter().all(|v| *v == 0.0))
            }
        }
    }

    /// Value at `(s, τ)`; `lag_floor` clamps the fractional kind when its own
    /// `min_lag` is unset. Domain checks are the caller's job.
    pub fn value(&self, s: f64, tau: f64, lag_floor: Option<f64>) -> Result<Mat> {
        match self {
            KernelSpec::Constant { value } => Ok(value.clone()),
            KernelSpec::SeparableSum { terms } => {
                let (r, c) = self.shape().ok_or_else(empty_kernel)?;
                Ok(terms.iter().fold(Mat::zeros(r, c), |acc, t| {
                    acc + &t.coefficient * (horner(&t.s_poly, s) * horner(&t.tau_poly, tau))
                }))
            }
            KernelSpec::ConvolutionExponentialSum { terms } => {
                let (r, c) = self.shape().ok_or_else(empty_kernel)?;
                let lag = s - tau;
                Ok(terms.iter().fold(Mat::zeros(r, c), |acc, t| {
                    acc + &t.coefficient * (-t.rate * lag).exp()
                }))
            }
            KernelSpec::ConvolutionFractional {
                alpha,
                scale,
                min_lag,
            } => {
                let lag = (s - tau).max(0.0);
                let floor = min_lag.or(lag_floor).unwrap_or(0.0);
                let lag = lag.max(floor);
                if lag == 0.0 && *alpha < 1.0 {
                    return Err(Error::Domain(format!(
                        "fractional kernel with alpha={alpha} is singular at s=τ={s}; set min_lag"
                    )));
                }
                Ok(scale * lag.powf(alpha - 1.0))
            }
            KernelSpec::Tabulated { times, values } => {
                let (i, ws) = bracket(times, s);
                let (j, wt) = bracket(times, tau);
                let v = &values[i][j] * ((1.0 - ws) * (1.0 - wt))
                    + &values[i + 1][j] * (ws * (1.0 - wt))
                    + &values[i][j + 1] * ((1.0 - ws) * wt)
                    + &values[i + 1][j + 1] * (ws * wt);
                Ok(v)
            }
        }
    }
}

fn empty_kernel() -> Error {
    Error::Shape("kernel has no terms".into())
}

/// Time-dependent symmetric weight: constant, or piecewise linear in time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum WeightSpec {
    Constant(#[serde(with = "matrix_serde")] Mat),
    Tabulated {
        times: Vec<f64>,
        #[serde(with = "matrix_serde::list")]
        values: Vec<Mat>,
    },
}

impl WeightSpec {
    pub fn shape(&self) -> Option<(usize, usize)> {
        match self {
            WeightSpec::Constant(m) => Some(m.shape()),
            WeightSpec::Tabulated { values, .. } => values.first().map(|m| m.shape()),
        }
    }

    pub fn at(&self, s: f64) -> Mat {
        match self {
            WeightSpec::Constant(m) => m.clone(),
            WeightSpec::Tabulated { times, values } => {
                if times.len() == 1 {
                    return values[0].clone();
                }
                let (i, w) = bracket(times, s);
                &values[i] * (1.0 - w) + &values[i + 1] * w
            }
        }
    }

    /// Points at which positivity must be checked. Linear interpolation of
    /// semidefinite matrices stays semidefinite, so table nodes suffice.
    fn sample_points(&self, t0: f64) -> Vec<(f64, Mat)> {
        match self {
            WeightSpec::Constant(m) => vec![(t0, m.clone())],
            WeightSpec::Tabulated { times, values } => {
                times.iter().copied().zip(values.iter().cloned()).collect()
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub t: f64,
    pub x: Vec<f64>,
}

/// Deterministic free path `x_t(·)`, linear between samples and constant
/// beyond the first and last sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FreePath {
    pub samples: Vec<PathSample>,
}

impl FreePath {
    pub fn constant(x: &[f64]) -> Self {
        FreePath {
            samples: vec![PathSample {
                t: 0.0,
                x: x.to_vec(),
            }],
        }
    }

    pub fn dim(&self) -> Option<usize> {
        self.samples.first().map(|s| s.x.len())
    }

    pub fn is_constant(&self) -> bool {
        match self.samples.first() {
            None => true,
            Some(first) => self.samples.iter().all(|s| s.x == first.x),
        }
    }

    pub fn at(&self, t: f64) -> Result<Vec<f64>> {
        let samples = &self.samples;
        let first = samples
            .first()
            .ok_or_else(|| Error::Argument("free path has no samples".into()))?;
        let last = samples.last().unwrap_or(first);
        if samples.len() == 1 || t <= first.t {
            return Ok(first.x.clone());
        }
        if t >= last.t {
            return Ok(last.x.clone());
        }
        let upper = samples.partition_point(|p| p.t <= t);
        let (a, b) = (&samples[upper - 1], &samples[upper]);
        let w = (t - a.t) / (b.t - a.t);
        Ok(a.x
            .iter()
            .zip(&b.x)
            .map(|(xa, xb)| (1.0 - w) * xa + w * xb)
            .collect())
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Coefficient {
    A,
    B,
    C,
    D,
}

/// A continuous-time LQ problem for a controlled forward stochastic
/// Volterra integral equation
///
/// ```text
/// X(s) = x(s) + ∫ₜˢ [A(s,τ)X(τ) + B(s,τ)u(τ)] dτ + ∫ₜˢ [C(s,τ)X(τ) + D(s,τ)u(τ)] dW(τ)
/// ```
///
/// with cost `½ E{ ∫ [XᵀQX + uᵀRu] ds + X(T)ᵀ G X(T) }`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProblemSpec {
    pub n: usize,
    pub m: usize,
    pub t0: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    #[serde(rename = "A")]
    pub a: KernelSpec,
    #[serde(rename = "B")]
    pub b: KernelSpec,
    #[serde(rename = "C")]
    pub c: KernelSpec,
    #[serde(rename = "D")]
    pub d: KernelSpec,
    #[serde(rename = "Q")]
    pub q: WeightSpec,
    #[serde(rename = "R")]
    pub r: WeightSpec,
    #[serde(rename = "G", with = "matrix_serde")]
    pub g: Mat,
    pub free_path: FreePath,
}

impl ProblemSpec {
    pub fn kernel(&self, which: Coefficient) -> &KernelSpec {
        match which {
            Coefficient::A => &self.a,
            Coefficient::B => &self.b,
            Coefficient::C => &self.c,
            Coefficient::D => &self.d,
        }
    }

    fn in_domain(&self, s: f64, tau: f64) -> bool {
        let slack = DOMAIN_SLACK * (self.t_end - self.t0).abs().max(1.0);
        tau >= self.t0 - slack && s <= self.t_end + slack && tau <= s + slack
    }

    /// True when every kernel is constant and the free path is constant,
    /// i.e. the state equation is an ordinary SDE.
    pub fn is_sde_reducible(&self) -> bool {
        [&self.a, &self.b, &self.c, &self.d]
            .iter()
            .all(|k| matches!(k, KernelSpec::Constant { .. }))
            && matches!(self.q, WeightSpec::Constant(_))
            && matches!(self.r, WeightSpec::Constant(_))
            && self.free_path.is_constant()
    }

    pub(crate) fn kernel_value(
        &self,
        which: Coefficient,
        s: f64,
        tau: f64,
        lag_floor: Option<f64>,
    ) -> Result<Mat> {
        if !self.in_domain(s, tau) {
            return Err(Error::Domain(format!(
                "(s, τ) = ({s}, {tau}) outside t0 ≤ τ ≤ s ≤ T on [{}, {}]",
                self.t0, self.t_end
            )));
        }
        self.kernel(which).value(s, tau, lag_floor)
    }
}

/// Kernel value at `(s, τ)` with `t0 ≤ τ ≤ s ≤ T`.
pub fn eval_kernel(spec: &ProblemSpec, which: Coefficient, s: f64, tau: f64) -> Result<Mat> {
    spec.kernel_value(which, s, tau, None)
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ValidationMode {
    /// Shapes and domain, plus the standard positivity condition on weights.
    StrictH4,
    /// Shapes and domain only.
    ConvexOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub quantity: String,
    pub time: Option<f64>,
    pub eigenvalue: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub mode: ValidationMode,
    /// Smallest sampled eigenvalue of R (the uniform positivity constant).
    pub r_margin: Option<f64>,
    pub q_margin: Option<f64>,
    pub g_margin: Option<f64>,
    pub violations: Vec<Violation>,
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn check_shape(what: &str, got: Option<(usize, usize)>, want: (usize, usize)) -> Result<()> {
    match got {
        Some(shape) if shape == want => Ok(()),
        Some(shape) => Err(Error::Shape(format!(
            "{what} is {}x{}, expected {}x{}",
            shape.0, shape.1, want.0, want.1
        ))),
        None => Err(Error::Shape(format!("{what} has no entries"))),
    }
}

fn check_times(what: &str, times: &[f64], count: usize, t0: f64, t_end: f64) -> Result<()> {
    if times.len() != count {
        return Err(Error::Shape(format!(
            "{what}: {} times but {count} table entries",
            times.len()
        )));
    }
    if times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument(format!(
            "{what}: times not strictly increasing"
        )));
    }
    let slack = DOMAIN_SLACK * (t_end - t0).abs().max(1.0);
    match (times.first(), times.last()) {
        (Some(&a), Some(&b)) if a <= t0 + slack && b >= t_end - slack => Ok(()),
        _ => Err(Error::Domain(format!(
            "{what}: table does not cover [{t0}, {t_end}]"
        ))),
    }
}

fn check_kernel(
    name: &str,
    kernel: &KernelSpec,
    want: (usize, usize),
    spec: &ProblemSpec,
) -> Result<()> {
    check_shape(name, kernel.shape(), want)?;
    match kernel {
        KernelSpec::SeparableSum { terms } => {
            for t in terms {
                check_shape(name, Some(t.coefficient.shape()), want)?;
            }
        }
        KernelSpec::ConvolutionExponentialSum { terms } => {
            for t in terms {
                check_shape(name, Some(t.coefficient.shape()), want)?;
            }
        }
        KernelSpec::Tabulated { times, values } => {
            if times.len() < 2 {
                return Err(Error::Argument(format!(
                    "{name}: tabulated kernel needs ≥ 2 times"
                )));
            }
            check_times(name, times, values.len(), spec.t0, spec.t_end)?;
            for row in values {
                if row.len() != times.len() {
                    return Err(Error::Shape(format!("{name}: table is not square")));
                }
                for v in row {
                    check_shape(name, Some(v.shape()), want)?;
                }
            }
        }
        KernelSpec::Constant { .. } | KernelSpec::ConvolutionFractional { .. } => {}
    }
    Ok(())
}

/// Checks shapes and domain coverage, and in [`ValidationMode::StrictH4`]
/// the standard condition `Q ⪰ 0`, `R ≻ 0`, `G ⪰ 0` at every sample point.
pub fn validate_spec(spec: &ProblemSpec, mode: ValidationMode) -> Result<ValidationReport> {
    let (n, m) = (spec.n, spec.m);
    if n == 0 || m == 0 {
        return Err(Error::Shape(
            "state and control dimensions must be positive".into(),
        ));
    }
    if !(spec.t0 < spec.t_end) {
        return Err(Error::Argument(format!(
            "horizon [{}, {}] is empty",
            spec.t0, spec.t_end
        )));
    }
    check_kernel("A", &spec.a, (n, n), spec)?;
    check_kernel("B", &spec.b, (n, m), spec)?;
    check_kernel("C", &spec.c, (n, n), spec)?;
    check_kernel("D", &spec.d, (n, m), spec)?;
    check_shape("Q", spec.q.shape(), (n, n))?;
    check_shape("R", spec.r.shape(), (m, m))?;
    check_shape("G", Some(spec.g.shape()), (n, n))?;
    for (name, w) in [("Q", &spec.q), ("R", &spec.r)] {
        if let WeightSpec::Tabulated { times, values } = w {
            let want = if name == "Q" { (n, n) } else { (m, m) };
            for v in values {
                check_shape(name, Some(v.shape()), want)?;
            }
            if times.len() > 1 {
                check_times(name, times, values.len(), spec.t0, spec.t_end)?;
            } else if times.len() != values.len() {
                return Err(Error::Shape(format!(
                    "{name}: times/values length mismatch"
                )));
            }
        }
    }
    match spec.free_path.dim() {
        None => return Err(Error::Argument("free path has no samples".into())),
        Some(dim) if dim != n => {
            return Err(Error::Shape(format!(
                "free path has dimension {dim}, expected {n}"
            )))
        }
        Some(_) => {}
    }
    if spec.free_path.samples.iter().any(|p| p.x.len() != n) {
        return Err(Error::Shape(
            "free path samples have inconsistent dimension".into(),
        ));
    }
    if spec.free_path.samples.windows(2).any(|w| w[1].t <= w[0].t) {
        return Err(Error::Argument(
            "free path sample times not strictly increasing".into(),
        ));
    }

    let mut warnings = Vec::new();
    for (name, k) in [
        ("A", &spec.a),
        ("B", &spec.b),
        ("C", &spec.c),
        ("D", &spec.d),
    ] {
        if let KernelSpec::ConvolutionFractional { alpha, .. } = k {
            let what = if *alpha < 1.0 {
                "unbounded near diagonal"
            } else {
                "derivative unbounded near diagonal"
            };
            warnings.push(format!("{name}: kernel nonconforming with H1 ({what})"));
        }
    }

    let mut report = ValidationReport {
        mode,
        r_margin: None,
        q_margin: None,
        g_margin: None,
        violations: Vec::new(),
        warnings,
    };
    if mode == ValidationMode::ConvexOnly {
        return Ok(report);
    }

    let mut r_margin = f64::INFINITY;
    for (t, r) in spec.r.sample_points(spec.t0) {
        let eig = min_eigenvalue(&r);
        r_margin = r_margin.min(eig);
        if !(eig > 0.0) {
            report.violations.push(Violation {
                quantity: "R".into(),
                time: Some(t),
                eigenvalue: eig,
            });
        }
    }
    let mut q_margin = f64::INFINITY;
    for (t, q) in spec.q.sample_points(spec.t0) {
        let eig = min_eigenvalue(&q);
        q_margin = q_margin.min(eig);
        if eig < -PSD_TOLERANCE {
            report.violations.push(Violation {
                quantity: "Q".into(),
                time: Some(t),
                eigenvalue: eig,
            });
        }
    }
    let g_margin = min_eigenvalue(&spec.g);
    if g_margin < -PSD_TOLERANCE {
        report.violations.push(Violation {
            quantity: "G".into(),
            time: None,
            eigenvalue: g_margin,
        });
    }
    report.r_margin = Some(r_margin);
    report.q_margin = Some(q_margin);
    report.g_margin = Some(g_margin);

    if report.passed() {
        Ok(report)
    } else {
        let msg = report
            .violations
            .iter()
            .map(|v| match (v.quantity.as_str(), v.time) {
                ("R", Some(t)) => {
                    format!("R not uniformly positive at s={t}, eig={}", v.eigenvalue)
                }
                (q, Some(t)) => format!(
                    "{q} not positive semidefinite at s={t}, eig={}",
                    v.eigenvalue
                ),
                (q, None) => format!("{q} not positive semidefinite, eig={}", v.eigenvalue),
            })
            .collect::<Vec<_>>()
            .join("; ");
        Err(Error::StandardCondition(msg))
    }
}
