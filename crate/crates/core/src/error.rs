use thiserror::Error;

/// Failure modes shared by every module. `code()` gives the stable
/// machine-readable identifier used in CLI failure records.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("SCHEMA_ERROR: {0}")]
    Schema(String),
    #[error("ELLIPTICITY_VIOLATION: {0}")]
    Ellipticity(String),
    #[error("COOPERATIVITY_VIOLATION: {0}")]
    Cooperativity(String),
    #[error("NOT_ESSENTIALLY_NONNEGATIVE: {0}")]
    NotEssentiallyNonnegative(String),
    #[error("NO_CONVERGENCE: {0}")]
    NoConvergence(String),
    #[error("SINGULAR_STEP: {0}")]
    SingularStep(String),
    #[error("SHAPE_MISMATCH: {0}")]
    ShapeMismatch(String),
    #[error("REDUCIBLE_SPEC: {0}")]
    ReducibleSpec(String),
    #[error("BRACKET_FAILURE: {0}")]
    BracketFailure(String),
    #[error("HYPOTHESIS_NOT_MET: {0}")]
    HypothesisNotMet(String),
    #[error("NOT_SELF_ADJOINT: {0}")]
    NotSelfAdjoint(String),
    #[error("INVALID_DECOMPOSITION: {0}")]
    InvalidDecomposition(String),
    #[error("ENUMERATION_TOO_LARGE: {0}")]
    EnumerationTooLarge(String),
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::Schema(_) => "SCHEMA_ERROR",
            Error::Ellipticity(_) => "ELLIPTICITY_VIOLATION",
            Error::Cooperativity(_) => "COOPERATIVITY_VIOLATION",
            Error::NotEssentiallyNonnegative(_) => "NOT_ESSENTIALLY_NONNEGATIVE",
            Error::NoConvergence(_) => "NO_CONVERGENCE",
            Error::SingularStep(_) => "SINGULAR_STEP",
            Error::ShapeMismatch(_) => "SHAPE_MISMATCH",
            Error::ReducibleSpec(_) => "REDUCIBLE_SPEC",
            Error::BracketFailure(_) => "BRACKET_FAILURE",
            Error::HypothesisNotMet(_) => "HYPOTHESIS_NOT_MET",
            Error::NotSelfAdjoint(_) => "NOT_SELF_ADJOINT",
            Error::InvalidDecomposition(_) => "INVALID_DECOMPOSITION",
            Error::EnumerationTooLarge(_) => "ENUMERATION_TOO_LARGE",
        }
    }

    /// Errors caused by the input rather than by the numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Ellipticity(_)
                | Error::Cooperativity(_)
                | Error::NotEssentiallyNonnegative(_)
                | Error::ShapeMismatch(_)
                | Error::ReducibleSpec(_)
                | Error::HypothesisNotMet(_)
                | Error::NotSelfAdjoint(_)
                | Error::InvalidDecomposition(_)
                | Error::EnumerationTooLarge(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
