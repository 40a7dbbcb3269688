use thiserror::Error;

/// Errors raised by the library.
///
/// Validation problems (bad parameters, malformed input) are kept apart from
/// runtime overflow so callers can map them to different exit codes.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    #[error("vertex budget of {budget} exceeded ({vertices} vertices realized)")]
    VertexBudgetExceeded { budget: usize, vertices: usize },

    #[error("vertex {0} is not in the frontier")]
    NotInFrontier(usize),

    #[error("tree already has an extra root")]
    ExtraRootPresent,

    #[error("malformed tree file at line {line}: {msg}")]
    TreeFormat { line: usize, msg: String },

    #[error("too many vertices for exact analysis: {vertices} (limit {limit})")]
    TooManyVertices { vertices: usize, limit: usize },

    #[error("state space too large for a dense solve: {states} states (limit {limit})")]
    StateSpaceTooLarge { states: usize, limit: usize },

    #[error("chain is reducible: state {state:#b} is absorbing")]
    Reducible { state: u32 },

    #[error("target set is not reachable (with probability one) from state {start:#b}")]
    Unreachable { start: u32 },

    #[error("singular linear system")]
    Singular,

    #[error("coupling precondition violated: {0}")]
    Coupling(String),
}

impl Error {
    pub(crate) fn param(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    /// True for overflow-type failures that happen at runtime rather than at
    /// validation time.
    pub fn is_runtime(&self) -> bool {
        matches!(self, Error::VertexBudgetExceeded { .. } | Error::Singular)
    }
}

pub type Result<T> = std::result::Result<T, Error>;
