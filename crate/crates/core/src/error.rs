use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A user callable returned a non-finite value.
    #[error("evaluation of `{callable}` produced a non-finite value")]
    Eval { callable: &'static str },

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    /// An integrated or iterated quantity left the finite range.
    #[error("non-finite {what} at index {index}")]
    NonFinite { what: &'static str, index: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("problem `{0}` is not flagged affine in the control")]
    NotAffine(String),

    #[error("reference solve did not reach tolerance: residual {residual:.3e} > {tol:.3e}")]
    ReferenceNotConverged { residual: f64, tol: f64 },

    #[error("plant diverged at MPC step {step} after {completed} completed steps")]
    PlantDiverged { step: usize, completed: usize },

    #[error("unknown problem key `{0}`")]
    UnknownProblem(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
