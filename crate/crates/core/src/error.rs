use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("non-finite density value {value} at {point:?}")]
    Evaluation { point: Vec<f64>, value: f64 },

    #[error("switch budget overflows usize (grid {cells_per_axis}^{d})")]
    BudgetOverflow { cells_per_axis: u64, d: usize },

    #[error("switch budget exceeded: {used} > {budget} (achieved TV {achieved_tv:.3e})")]
    BudgetExceeded { used: usize, budget: usize, achieved_tv: f64 },

    #[error("truncation search exhausted; best R={best_r}, h={best_h}")]
    SearchExhausted { best_r: f64, best_h: f64 },

    #[error("piece count {count} exceeds cap {cap}")]
    Complexity { count: usize, cap: usize },

    #[error("covariance is not positive definite (min eigenvalue {min_eig:.3e})")]
    Spectral { min_eig: f64 },

    #[error("unsupported dimension {d}: {reason}")]
    UnsupportedDimension { d: usize, reason: String },

    #[error("tail certification failed (worst ratio {worst_ratio:.4e} at radius {radius})")]
    TailCertification { worst_ratio: f64, radius: f64 },

    #[error("absolute continuity violated at {point:?}")]
    AbsoluteContinuity { point: Vec<f64> },

    #[error("points {i} and {j} coincide within tolerance")]
    Distinctness { i: usize, j: usize },

    #[error("no separating vector found after {draws} draws")]
    Separation { draws: usize },

    #[error("rank deficient at s={s}: singular values {singular_values:?}")]
    Rank { s: f64, singular_values: Vec<f64> },

    #[error("synthesis did not reach the requested accuracy: {0}")]
    Synthesis(String),

    #[error("ODE integration failed: {0}")]
    Integration(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
