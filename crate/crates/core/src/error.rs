use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension { what: String, expected: usize, got: usize },

    #[error("unknown frame `{0}`")]
    UnknownFrame(String),

    #[error("total mass is zero")]
    ZeroMass,

    #[error("loop closure of submechanism `{submechanism}` did not converge after {iterations} iterations (residual {residual:.3e})")]
    ResolutionFailure { submechanism: String, residual: f64, iterations: usize },

    #[error("singular constraint Jacobian in submechanism `{submechanism}` (smallest pivot {pivot:.3e})")]
    Singularity { submechanism: String, pivot: f64 },

    #[error("actuation map is singular (smallest singular value {sigma:.3e})")]
    ActuationSingular { sigma: f64 },

    #[error("contact constraints are infeasible (residual {residual:.3e})")]
    InfeasibleContact { residual: f64 },

    #[error("KKT system is ill-conditioned (condition estimate {condition:.3e})")]
    IllConditioned { condition: f64 },

    #[error("solver made no progress: {0}")]
    NoProgress(String),

    #[error("non-finite value in {0}")]
    NumericalFailure(String),

    #[error("infeasible motion recipe: {0}")]
    InfeasibleRecipe(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("at knot {knot}: {source}")]
    AtKnot { knot: usize, source: Box<Error> },

    #[error(transparent)]
    Model(#[from] crate::modelio::ModelError),
}

impl Error {
    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension { what: what.into(), expected, got }
    }
}

pub(crate) fn check_dim(what: &str, expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::dim(what, expected, got));
    }
    Ok(())
}
