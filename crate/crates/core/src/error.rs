use thiserror::Error;

/// Errors raised anywhere in the analysis pipeline.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("singular matrix: {0}")]
    SingularMatrix(String),
    #[error("singular Jacobian: {0}")]
    SingularJacobian(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("evaluation failure: {0}")]
    EvaluationFailure(String),
    #[error("hypothesis violated: {0}")]
    HypothesisViolated(String),

    #[error("rank mismatch: rank E = {rank}, expected {expected}")]
    RankMismatch { rank: usize, expected: usize },
    #[error("reduction conditions violated: {0}")]
    ConditionsViolated(String),
    #[error("singular block: {0}")]
    SingularBlock(String),

    #[error("degenerate zero at {point:?} (|det J| = {det:e})")]
    DegenerateZero { point: Vec<f64>, det: f64 },
    #[error("zero on or near the box boundary at {0:?}")]
    BoundaryZero(Vec<f64>),
    #[error("zero search suspect incomplete: {0}")]
    SuspectIncomplete(String),

    #[error("seed rejected: {0}")]
    SeedRejected(String),
    #[error("singular monodromy: {0}")]
    SingularMonodromy(String),

    #[error("syntax error at byte {offset}: expected {expected}")]
    SyntaxError { offset: usize, expected: String },
    #[error("unknown identifier `{0}`")]
    UnknownIdentifier(String),
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("non-finite result: {0}")]
    NonfiniteResult(String),
    #[error("schema error: {0}")]
    SchemaError(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// True for errors caused by malformed input rather than by the mathematics.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::SyntaxError { .. }
                | Error::UnknownIdentifier(_)
                | Error::UnboundVariable(_)
                | Error::SchemaError(_)
        )
    }
}
