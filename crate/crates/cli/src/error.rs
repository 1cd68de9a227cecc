use std::fmt;
use std::path::Path;

use hazard_core::HazardError;
use serde_json::{json, Value};

/// Exit code for a failed computation stage.
pub const EXIT_COMPUTE: i32 = 1;
/// Exit code for bad flags, configs, or unreadable inputs.
pub const EXIT_USAGE: i32 = 2;

/// Error carried to the process boundary and printed as JSON on stderr.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub kind: &'static str,
    pub message: String,
    pub details: Option<Value>,
}

impl CliError {
    pub fn config(message: impl Into<String>) -> Self {
        Self {
            code: EXIT_USAGE,
            kind: "config",
            message: message.into(),
            details: None,
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Self {
            kind: "usage",
            ..Self::config(message)
        }
    }

    pub fn missing_file(path: &Path) -> Self {
        Self {
            kind: "missing_file",
            details: Some(json!({ "path": path.display().to_string() })),
            ..Self::config(format!("cannot read {}: no such file", path.display()))
        }
    }

    pub fn compute(kind: &'static str, message: impl Into<String>) -> Self {
        Self {
            code: EXIT_COMPUTE,
            kind,
            message: message.into(),
            details: None,
        }
    }

    pub fn with_details(mut self, details: Value) -> Self {
        self.details = Some(details);
        self
    }

    /// Attaches the file a core error arose from. Schema and validation
    /// problems in an input file are the caller's to fix, so they count as
    /// usage errors.
    pub fn from_input(path: &Path, e: HazardError) -> Self {
        let mut err = Self::from(e);
        if matches!(err.kind, "validation" | "schema" | "json" | "csv") {
            err.code = EXIT_USAGE;
        }
        err.message = format!("{}: {}", path.display(), err.message);
        err
    }

    pub fn with_path(mut self, path: &Path) -> Self {
        self.message = format!("{}: {}", path.display(), self.message);
        self
    }

    pub fn to_json(&self) -> Value {
        let mut body = json!({ "kind": self.kind, "message": self.message });
        if let Some(d) = &self.details {
            body["details"] = d.clone();
        }
        json!({ "error": body })
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind, self.message)
    }
}

impl std::error::Error for CliError {}

const MAX_LISTED: usize = 100;

impl From<HazardError> for CliError {
    fn from(e: HazardError) -> Self {
        let message = e.to_string();
        let (kind, details) = match &e {
            HazardError::Domain(_) => ("domain", None),
            HazardError::InvalidParams(_) => ("invalid_params", None),
            HazardError::Shape(_) => ("shape", None),
            HazardError::NonFiniteActivation { block } => ("non_finite_activation", Some(json!({ "block": block }))),
            HazardError::NonFiniteGradient { path } => ("non_finite_gradient", Some(json!({ "path": path }))),
            HazardError::Inconsistent { index, reason } => {
                ("inconsistent", Some(json!({ "index": index, "reason": reason })))
            }
            HazardError::Convergence {
                iterations,
                grad_norm,
                params,
            } => (
                "convergence",
                Some(json!({ "iterations": iterations, "grad_norm": grad_norm, "params": params })),
            ),
            HazardError::Boundary(_) => ("boundary", None),
            HazardError::Degenerate(_) => ("degenerate", None),
            HazardError::Quadrature { achieved, requested } => {
                ("quadrature", Some(json!({ "achieved": achieved, "requested": requested })))
            }
            HazardError::Divergence { epoch, trace } => {
                ("divergence", Some(json!({ "epoch": epoch, "trace": trace })))
            }
            HazardError::UnknownSite(s) => ("unknown_site", Some(json!({ "site": s }))),
            HazardError::MissingSites(s) => ("missing_sites", Some(json!({ "gaps": s }))),
            HazardError::Metadata(_) => ("metadata", None),
            HazardError::Validation(v) => (
                "validation",
                Some(json!({
                    "count": v.len(),
                    "violations": v.iter().take(MAX_LISTED)
                        .map(|v| json!({ "row": v.row, "reason": v.reason }))
                        .collect::<Vec<_>>(),
                })),
            ),
            HazardError::Schema(_) => ("schema", None),
            HazardError::Io(_) => ("io", None),
            HazardError::Csv(_) => ("csv", None),
            HazardError::Json(_) => ("json", None),
        };
        Self {
            code: EXIT_COMPUTE,
            kind,
            message,
            details,
        }
    }
}
