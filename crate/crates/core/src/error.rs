use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied value violates a documented precondition. `field`
    /// names the offending input so CLI diagnostics can point at it.
    #[error("invalid `{field}`: {reason}")]
    Invalid { field: String, reason: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("loss `{loss}` needs a class label but the observation has none")]
    MissingLabel { loss: &'static str },

    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e})")]
    NotConverged {
        what: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("hessian is not positive definite (smallest eigenvalue {min_eigenvalue:.3e})")]
    SingularHessian { min_eigenvalue: f64 },

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("stationarity check failed: weighted gradient norm {norm:.3e} exceeds {tolerance:.1e}")]
    NotStationary { norm: f64, tolerance: f64 },

    #[error("replicate {replicate}, round {round}: {source}")]
    Simulation {
        replicate: usize,
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
