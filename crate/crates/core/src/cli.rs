//! Command-line front end.
//!
//! ```text
//! volterra-lq <solve|simulate|validate|reduce-sde> --config FILE [--out DIR] [--threads K]
//! ```
//!
//! Exit codes: 0 success, 1 usage or config error, 2 solver failure
//! (regularity or non-convergence), 3 failed validation.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::{Error, Result};
use crate::linalg::{asymmetry, max_abs, min_eigenvalue};
use crate::model::{validate_spec, ProblemSpec, ValidationMode};
use crate::oracle::{
    qp_convexity, run_identity_suite, Bound, CheckResult, OracleReport, MAX_DEPTH,
};
use crate::problem::DiscreteProblem;
use crate::riccati::{
    bilinear_norms, picard_solve, read_solution, solve_dp, value_at, write_solution, PicardTrace,
    RiccatiSolution, MAX_ENUMERATION_DIM,
};
use crate::sde_reduce::reduction_pipeline;
use crate::simulate::{simulate_closed_loop, write_path_costs, DriverKind, NoiseDriver, PathCount};

pub const CONFIG_SCHEMA: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_SOLVER: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Solve,
    Simulate,
    Validate,
    ReduceSde,
}

#[derive(Debug, Parser)]
#[command(
    name = "volterra-lq",
    version,
    about = "LQ control of stochastic Volterra equations"
)]
struct Args {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `outputs.dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for simulation.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(untagged)]
pub enum ProblemSource {
    Inline(Box<ProblemSpec>),
    /// Path to a problem JSON file, relative to the config file.
    File(PathBuf),
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    #[serde(rename = "N")]
    pub steps: usize,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SolverConfig {
    #[default]
    Dp,
    Picard {
        #[serde(default = "default_tol")]
        tol: f64,
        #[serde(default = "default_max_iter")]
        max_iter: usize,
    },
}

fn default_tol() -> f64 {
    1e-10
}

fn default_max_iter() -> usize {
    50
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default = "default_driver")]
    pub driver: DriverKind,
    #[serde(default = "default_paths")]
    pub paths: usize,
    #[serde(default)]
    pub seed: u64,
    /// Enumerate all `2^N` two-point paths instead of sampling.
    #[serde(default)]
    pub exhaustive: bool,
    /// Previously written `riccati.json`; solved inline when absent.
    #[serde(default)]
    pub solution_file: Option<PathBuf>,
}

fn default_driver() -> DriverKind {
    DriverKind::Gaussian
}

fn default_paths() -> usize {
    10_000
}

impl Default for SimulateConfig {
    fn default() -> Self {
        SimulateConfig {
            driver: default_driver(),
            paths: default_paths(),
            seed: 0,
            exhaustive: false,
            solution_file: None,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default = "default_true")]
    pub enabled: bool,
    #[serde(default = "default_max_depth")]
    pub max_depth: usize,
}

fn default_true() -> bool {
    true
}

fn default_max_depth() -> usize {
    MAX_DEPTH
}

impl Default for OracleConfig {
    fn default() -> Self {
        OracleConfig {
            enabled: true,
            max_depth: MAX_DEPTH,
        }
    }
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, Deserialize, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default)]
    pub dir: Option<PathBuf>,
    #[serde(default = "default_formats")]
    pub formats: Vec<Format>,
}

fn default_formats() -> Vec<Format> {
    vec![Format::Json, Format::Csv]
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: None,
            formats: default_formats(),
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema: u32,
    pub problem: ProblemSource,
    pub grid: GridConfig,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub simulate: SimulateConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

/// A parsed config with the problem loaded and paths resolved.
pub struct LoadedConfig {
    pub run: RunConfig,
    pub spec: ProblemSpec,
    pub base: PathBuf,
}

impl LoadedConfig {
    fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base.join(p)
        }
    }

    fn csv(&self) -> bool {
        self.run.outputs.formats.contains(&Format::Csv)
    }
}

fn parse_json<T: serde::de::DeserializeOwned>(text: &str, what: &Path) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::Config(format!("{}: {e}", what.display())))
}

pub fn load_config(path: &Path) -> Result<LoadedConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    let value: serde_json::Value = parse_json(&text, path)?;
    match value.get("schema").and_then(|v| v.as_u64()) {
        Some(v) if v == CONFIG_SCHEMA as u64 => {}
        Some(v) => {
            return Err(Error::Config(format!(
                "unsupported config schema {v} (expected {CONFIG_SCHEMA})"
            )))
        }
        None => return Err(Error::Config("config must declare \"schema\": 1".into())),
    }
    let run: RunConfig = parse_json(&text, path)?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let spec = match &run.problem {
        ProblemSource::Inline(spec) => (**spec).clone(),
        ProblemSource::File(p) => {
            let p = if p.is_absolute() {
                p.clone()
            } else {
                base.join(p)
            };
            let text = fs::read_to_string(&p).map_err(|e| {
                Error::Config(format!("cannot read problem file {}: {e}", p.display()))
            })?;
            parse_json(&text, &p)?
        }
    };
    if run.grid.steps == 0 {
        return Err(Error::Config("grid.N must be at least 1".into()));
    }
    validate_spec(&spec, ValidationMode::ConvexOnly)?;
    Ok(LoadedConfig { run, spec, base })
}

pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Regularity { .. } | Error::Convergence { .. } | Error::Simulation { .. } => {
            EXIT_SOLVER
        }
        Error::Convexity { .. } => EXIT_VALIDATION,
        _ => EXIT_USAGE,
    }
}

struct Outputs {
    dir: PathBuf,
}

impl Outputs {
    fn new(dir: PathBuf) -> Result<Self> {
        fs::create_dir_all(&dir)?;
        Ok(Outputs { dir })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    fn json<T: Serialize>(&self, name: &str, value: &T) -> Result<()> {
        let mut text = serde_json::to_string_pretty(value)?;
        text.push('\n');
        fs::write(self.path(name), text)?;
        Ok(())
    }
}

/// Solver output shared by `solve` and `validate`.
struct Solved {
    problem: DiscreteProblem,
    solution: RiccatiSolution,
    picard: Option<PicardTrace>,
}

fn solve_configured(cfg: &LoadedConfig) -> Result<Solved> {
    let problem = DiscreteProblem::from_spec(&cfg.spec, cfg.run.grid.steps)?;
    let (solution, picard) = match cfg.run.solver {
        SolverConfig::Dp => (solve_dp(&problem.lifted, &problem.coeffs)?, None),
        SolverConfig::Picard { tol, max_iter } => {
            let (s, t) = picard_solve(&problem.lifted, &problem.coeffs, tol, max_iter)?;
            (s, Some(t))
        }
    };
    Ok(Solved {
        problem,
        solution,
        picard,
    })
}

fn cmd_solve(cfg: &LoadedConfig, out: &Outputs) -> Result<()> {
    let Solved {
        problem,
        solution,
        picard,
    } = solve_configured(cfg)?;
    let value = value_at(&solution, 0, &problem.chi0)?;
    fs::write(out.path("riccati.json"), write_solution(&solution)? + "\n")?;
    let mut summary = json!({
        "solver": match cfg.run.solver { SolverConfig::Dp => "dp", SolverConfig::Picard { .. } => "picard" },
        "N": problem.grid.steps,
        "h": problem.grid.h(),
        "value_at_start": value,
        "regularity_margin": solution.regularity_margin,
    });
    if let Some(trace) = &picard {
        summary["picard_iterations"] = json!(trace.iterations());
        summary["picard_final_residual"] = json!(trace.final_residual());
        summary["picard_min_monotonicity_margin"] = json!(trace.min_monotonicity_margin());
        summary["picard_residuals"] = json!(trace.residuals());
    }
    out.json("summary.json", &summary)?;
    if cfg.csv() {
        let mut w = csv::Writer::from_path(out.path("riccati.csv"))?;
        w.write_record(["k", "s_k", "trace_p", "theta_norm"])?;
        for (k, p) in solution.p.iter().enumerate() {
            let theta = solution
                .theta
                .get(k)
                .map(|t| format!("{:e}", t.norm()))
                .unwrap_or_default();
            w.write_record([
                k.to_string(),
                format!("{:e}", problem.grid.node(k)),
                format!("{:e}", p.trace()),
                theta,
            ])?;
        }
        w.flush()?;
    }
    println!("value_at_start = {value:e}");
    println!("regularity_margin = {:e}", solution.regularity_margin);
    if let Some(trace) = &picard {
        println!(
            "picard: {} iterations, final residual {:e}",
            trace.iterations(),
            trace.final_residual()
        );
    }
    Ok(())
}

fn cmd_simulate(cfg: &LoadedConfig, out: &Outputs) -> Result<()> {
    let sim = &cfg.run.simulate;
    let problem = DiscreteProblem::from_spec(&cfg.spec, cfg.run.grid.steps)?;
    let solution = match &sim.solution_file {
        Some(p) => {
            let p = cfg.resolve(p);
            let text = fs::read_to_string(&p).map_err(|e| {
                Error::Config(format!("cannot read solution file {}: {e}", p.display()))
            })?;
            let sol = read_solution(&text)?;
            if sol.n != problem.lifted.n
                || sol.m != problem.lifted.m
                || sol.grid.steps != problem.grid.steps
            {
                return Err(Error::Config(
                    "solution file does not match the configured problem".into(),
                ));
            }
            sol
        }
        None => solve_configured(cfg)?.solution,
    };
    let paths = if sim.exhaustive {
        if problem.grid.steps > MAX_DEPTH {
            return Err(Error::Config(format!(
                "exhaustive simulation needs N ≤ {MAX_DEPTH}, got {}",
                problem.grid.steps
            )));
        }
        PathCount::Exhaustive
    } else {
        if sim.paths == 0 {
            return Err(Error::Argument("simulate.paths must be positive".into()));
        }
        PathCount::Sampled(sim.paths)
    };
    let driver = NoiseDriver::new(
        if sim.exhaustive {
            DriverKind::TwoPoint
        } else {
            sim.driver
        },
        sim.seed,
    );
    let report = simulate_closed_loop(&problem, &solution.theta, &driver, paths)?;
    let value = value_at(&solution, 0, &problem.chi0)?;
    out.json(
        "sim_report.json",
        &json!({
            "driver": driver.kind,
            "seed": driver.seed,
            "value_at_start": value,
            "report": report,
        }),
    )?;
    if cfg.csv() {
        write_path_costs(&report, fs::File::create(out.path("paths.csv"))?)?;
    }
    println!(
        "cost_mean = {:e} ± {:e} over {} paths (value_at_start = {value:e})",
        report.cost_mean, report.cost_stderr, report.paths
    );
    Ok(())
}

fn riccati_checks(report: &mut OracleReport, solved: &Solved, strict: bool) -> Result<()> {
    let sol = &solved.solution;
    let scale = 1.0 + sol.p.iter().map(max_abs).fold(0.0, f64::max);
    let asym = sol.p.iter().map(asymmetry).fold(0.0, f64::max);
    report.push(CheckResult::new(
        "p_symmetric",
        asym,
        Bound::AtMost,
        1e-12 * scale,
    ));
    if strict {
        let psd = sol
            .p
            .iter()
            .map(min_eigenvalue)
            .fold(f64::INFINITY, f64::min);
        report.push(CheckResult::new(
            "p_positive_semidefinite",
            psd,
            Bound::AtLeast,
            -1e-10,
        ));
    }
    report.push(CheckResult::new(
        "regularity_margin",
        sol.regularity_margin,
        Bound::Above,
        0.0,
    ));
    if solved.problem.coeffs.b_vanishes() {
        report.push(CheckResult::new(
            "markovian_feedback_columns_zero",
            sol.non_markovian_gain(),
            Bound::AtMost,
            1e-12,
        ));
    }
    let p0 = &sol.p[0];
    if p0.nrows() <= MAX_ENUMERATION_DIM {
        let norms = bilinear_norms(p0)?;
        let slack = 1e-12 * (1.0 + norms.bilinear);
        let gap = (norms.quadratic - norms.bilinear).max(norms.bilinear - 2.0 * norms.quadratic);
        report.push(CheckResult::new(
            "norm_equivalence",
            gap,
            Bound::AtMost,
            slack,
        ));
    }
    let (picard_sol, trace) = match &solved.picard {
        Some(t) => (sol.clone(), t.clone()),
        None => picard_solve(&solved.problem.lifted, &solved.problem.coeffs, 1e-10, 60)?,
    };
    if strict {
        report.push(CheckResult::new(
            "picard_monotonicity",
            trace.min_monotonicity_margin(),
            Bound::AtLeast,
            -1e-10,
        ));
    }
    let dp = solve_dp(&solved.problem.lifted, &solved.problem.coeffs)?;
    let gap = picard_sol
        .p
        .iter()
        .zip(&dp.p)
        .map(|(a, b)| max_abs(&(a - b)))
        .fold(0.0, f64::max);
    report.push(CheckResult::new(
        "picard_matches_dp",
        gap,
        Bound::AtMost,
        1e-7 * scale,
    ));
    Ok(())
}

fn cmd_validate(cfg: &LoadedConfig, out: &Outputs) -> Result<bool> {
    let steps = cfg.run.grid.steps;
    if !cfg.run.oracle.enabled {
        return Err(Error::Config("validate needs oracle.enabled = true".into()));
    }
    let depth = cfg.run.oracle.max_depth.min(MAX_DEPTH);
    if steps > depth {
        return Err(Error::Config(format!(
            "validate needs N ≤ {depth}, got {steps}"
        )));
    }
    let mut report = OracleReport {
        passed: true,
        checks: Vec::new(),
    };
    let strict = match validate_spec(&cfg.spec, ValidationMode::StrictH4) {
        Ok(r) => {
            report.push(CheckResult::new(
                "standard_condition",
                r.r_margin.unwrap_or(f64::INFINITY),
                Bound::Above,
                0.0,
            ));
            true
        }
        Err(Error::StandardCondition(msg)) => {
            report
                .push(CheckResult::new("standard_condition", f64::NAN, Bound::Above, 0.0).at(msg));
            false
        }
        Err(e) => return Err(e),
    };
    match solve_configured(cfg) {
        Ok(solved) => {
            riccati_checks(&mut report, &solved, strict)?;
            for c in run_identity_suite(&solved.problem, &solved.solution)?.checks {
                report.push(c);
            }
        }
        Err(Error::Regularity {
            step, eigenvalue, ..
        }) => {
            report.push(
                CheckResult::new("regularity_margin", eigenvalue, Bound::Above, 0.0)
                    .at(format!("step {step}")),
            );
            let problem = DiscreteProblem::from_spec(&cfg.spec, steps)?;
            report.push(qp_convexity(&problem)?.0);
        }
        Err(e) => return Err(e),
    }
    out.json("validation.json", &report)?;
    for c in &report.checks {
        println!(
            "{} {:<34} {:e} (threshold {:e})",
            if c.passed { "ok  " } else { "FAIL" },
            c.name,
            c.value,
            c.threshold
        );
    }
    Ok(report.passed)
}

fn cmd_reduce_sde(cfg: &LoadedConfig, out: &Outputs) -> Result<()> {
    if !cfg.spec.is_sde_reducible() {
        return Err(Error::Config(
            "reduce-sde needs constant kernels A, B, C, D, constant Q and R, and a constant free path".into(),
        ));
    }
    let report = reduction_pipeline(&cfg.spec, cfg.run.grid.steps)?;
    let ratio = match report.ratio {
        Some(r) => json!(r),
        None => json!("exact"),
    };
    out.json(
        "reduction.json",
        &json!({
            "N": report.coarse.steps,
            "reference_steps": report.reference_steps,
            "reference_value": report.reference_value,
            "max_err_coarse": report.coarse.max_err,
            "max_err_fine": report.fine.max_err,
            "ratio": ratio,
        }),
    )?;
    if cfg.csv() {
        report
            .coarse
            .write_csv(fs::File::create(out.path("reduction_coarse.csv"))?)?;
        report
            .fine
            .write_csv(fs::File::create(out.path("reduction_fine.csv"))?)?;
    }
    println!(
        "max error: N={} {:e}, N={} {:e}, ratio {}",
        report.coarse.steps, report.coarse.max_err, report.fine.steps, report.fine.max_err, ratio
    );
    Ok(())
}

fn execute(command: Command, cfg: &LoadedConfig, out: &Outputs) -> Result<i32> {
    match command {
        Command::Solve => cmd_solve(cfg, out).map(|_| EXIT_OK),
        Command::Simulate => cmd_simulate(cfg, out).map(|_| EXIT_OK),
        Command::Validate => {
            cmd_validate(cfg, out).map(|ok| if ok { EXIT_OK } else { EXIT_VALIDATION })
        }
        Command::ReduceSde => cmd_reduce_sde(cfg, out).map(|_| EXIT_OK),
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args = match Args::try_parse_from(args) {
        Ok(a) => a,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = (|| -> Result<i32> {
        let cfg = load_config(&args.config)?;
        let dir = match (&args.out, &cfg.run.outputs.dir) {
            (Some(d), _) => d.clone(),
            (None, Some(d)) => cfg.resolve(d),
            (None, None) => PathBuf::from("."),
        };
        let out = Outputs::new(dir)?;
        match args.threads {
            Some(0) => Err(Error::Argument("--threads must be positive".into())),
            Some(k) => rayon::ThreadPoolBuilder::new()
                .num_threads(k)
                .build()
                .map_err(|e| Error::Argument(format!("cannot start thread pool: {e}")))?
                .install(|| execute(args.command, &cfg, &out)),
            None => execute(args.command, &cfg, &out),
        }
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
