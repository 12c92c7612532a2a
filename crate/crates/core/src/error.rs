use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{variable} = {value} is outside the valid range [{min}, {max}]")]
    OutOfRange { variable: &'static str, value: f64, min: f64, max: f64 },

    #[error("evanescent wave: |q| = {q} exceeds n*omega/c = {k} (1/um)")]
    Evanescent { q: f64, k: f64 },

    #[error("root solver failed: {0}")]
    Solver(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("grid mismatch: {0}")]
    Grid(String),

    #[error("distribution has zero total mass")]
    ZeroMass,

    #[error("histogram fit did not converge (best reduced chi2 {best_chi2_red:.4})")]
    FitNotConverged { best_chi2_red: f64 },

    #[error("parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
