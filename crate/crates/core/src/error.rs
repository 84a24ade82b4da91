use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    /// Weights fail the standard positivity condition (Q, G ⪰ 0, R ≻ 0).
    #[error("standard condition violated: {0}")]
    StandardCondition(String),

    /// The one-step gain matrix R + Dᵀ P D (discretized) is not positive definite.
    #[error("regularity failure at step {step} (s={time}): smallest eigenvalue {eigenvalue:e}")]
    Regularity {
        step: usize,
        time: f64,
        eigenvalue: f64,
    },

    #[error(
        "Picard iteration did not converge in {iterations} iterations (last residual {residual:e})"
    )]
    Convergence {
        iterations: usize,
        residual: f64,
        trace: Vec<f64>,
    },

    #[error("non-finite value on path {path} at step {step}")]
    Simulation { path: usize, step: usize },

    #[error(
        "quadratic program is not strictly convex: smallest Hessian eigenvalue {min_eigenvalue:e}"
    )]
    Convexity { min_eigenvalue: f64 },

    #[error("dimension {dim} too large for exhaustive enumeration (limit {limit}); use a sampling estimate instead")]
    TooLarge { dim: usize, limit: usize },

    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}
