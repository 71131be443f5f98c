use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("{solver} did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
        history: Vec<f64>,
    },

    #[error(
        "resolution guard: spacing {spacing:.4e} exceeds eps/16 = {limit:.4e}; \
         at least {required} nodes per unit length are needed"
    )]
    ResolutionGuard { spacing: f64, limit: f64, required: usize },

    #[error("ball of radius {radius} at {center:?} is not inside the solution domain")]
    OutsideDomain { center: [f64; 3], radius: f64 },

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
