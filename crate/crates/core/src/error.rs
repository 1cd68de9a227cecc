use thiserror::Error;

pub type Result<T> = std::result::Result<T, HazardError>;

/// One rejected input row.
#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    /// 1-based data row (header excluded). Zero means file-level.
    pub row: usize,
    pub reason: String,
}

impl std::fmt::Display for Violation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "row {}: {}", self.row, self.reason)
    }
}

#[derive(Debug, Error)]
pub enum HazardError {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite activation in block {block}")]
    NonFiniteActivation { block: usize },

    #[error("non-finite gradient at {path}")]
    NonFiniteGradient { path: String },

    #[error("inconsistent record {index}: {reason}")]
    Inconsistent { index: usize, reason: String },

    #[error("convergence failure after {iterations} iterations (gradient norm {grad_norm:e}, params {params:?})")]
    Convergence {
        iterations: usize,
        grad_norm: f64,
        params: Vec<f64>,
    },

    #[error("fit ran to the parameter boundary: {0}")]
    Boundary(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("quadrature did not converge: achieved error {achieved:e}, requested {requested:e}")]
    Quadrature { achieved: f64, requested: f64 },

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize, trace: Vec<crate::training::EpochStats> },

    #[error("unknown site {0}")]
    UnknownSite(String),

    #[error("missing sites: {0:?}")]
    MissingSites(Vec<String>),

    #[error("metadata mismatch: {0}")]
    Metadata(String),

    #[error("{} validation violation(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Validation(Vec<Violation>),

    #[error("schema: {0}")]
    Schema(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
