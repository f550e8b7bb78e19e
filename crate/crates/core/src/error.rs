use thiserror::Error;

use crate::solver::PenalizedSolution;

#[derive(Debug, Error)]
pub enum Error {
    #[error("evaluation failure in {what} at {point:?}")]
    Evaluation { what: String, point: Vec<f64> },

    #[error("problem invalid: {}", .0.join("; "))]
    InvalidProblem(Vec<String>),

    #[error("unknown reference problem `{0}`")]
    UnknownReference(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("projection failed to converge (best constraint violation {violation:.3e})")]
    ProjectionFailed { violation: f64 },

    #[error("degenerate active gradient for mixed constraint {constraint} (norm {norm:.3e})")]
    DegenerateNormal { constraint: usize, norm: f64 },

    #[error("point {point:?} is not within {tol:.1e} of the {what}")]
    NotInSet { what: String, point: Vec<f64>, tol: f64 },

    #[error("solver did not converge: {reason}")]
    NotConverged {
        reason: String,
        best: Box<PenalizedSolution>,
    },

    #[error("no feasible control sequence among {enumerated} candidates")]
    NoFeasibleSequence { enumerated: u64 },

    #[error("enumeration of {0} sequences exceeds the 1e7 budget")]
    EnumerationTooLarge(u128),

    #[error("state constraint active at t = {t}: mixed mode refused")]
    StateConstraintActive { t: f64 },

    #[error("sampler found no feasible control at t = {t}")]
    SamplerStarved { t: f64 },

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
