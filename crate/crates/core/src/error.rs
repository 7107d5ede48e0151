use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("malformed polymer: {0}")]
    MalformedPolymer(String),

    #[error("resource limit exceeded after {explored} steps (budget {budget}): {what}")]
    ResourceLimit {
        what: String,
        explored: u64,
        budget: u64,
    },

    #[error("size limit: {what} has size {size}, cap is {cap}")]
    SizeLimit { what: String, size: usize, cap: usize },

    #[error("patch too small: {0}")]
    PatchTooSmall(String),

    #[error("unassigned variable {0}")]
    UnassignedVariable(u32),

    #[error("vector for variable {0} is not a unit vector")]
    NonUnitVector(u32),

    #[error("symbol references variables outside the allowed support: {0}")]
    UnsupportedSymbol(String),

    #[error("beta = {beta} is below the convergence threshold {threshold}")]
    ThresholdViolation { beta: f64, threshold: f64 },

    #[error("internal consistency failure: {0}")]
    Consistency(String),
}

pub type Result<T> = std::result::Result<T, Error>;
