use thiserror::Error;

/// Errors raised across graph construction, estimation and inference.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("node id {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("duplicate edge ({0}, {1})")]
    DuplicateEdge(usize, usize),
    #[error("length mismatch: {what} has {got} entries, expected {expected}")]
    LengthMismatch {
        what: &'static str,
        got: usize,
        expected: usize,
    },
    #[error("overlap violated at node {node}: propensity {p} not in (0, 1)")]
    Overlap { node: usize, p: f64 },
    #[error("non-finite outcome at node {0}")]
    NonFiniteOutcome(usize),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("every node is treated; no untreated nodes to fit the interference function")]
    AllTreated,
    #[error("partitions come from different graphs or mappings")]
    MismatchedInputs,
    #[error("{count} treated node(s) have no untreated match (first: {first})")]
    UnmatchedTreated { count: usize, first: usize },
    #[error("no treated nodes")]
    NoTreatedNodes,
    #[error("insufficient degrees of freedom: {observations} observations for {parameters} parameters")]
    InsufficientDof {
        observations: usize,
        parameters: usize,
    },
    #[error("propensity at node {node} is {p}, outside ({eps}, 1 - {eps})")]
    PropensityAtBoundary { node: usize, p: f64, eps: f64 },
    #[error("pooled design is rank deficient: {0}")]
    RankDeficient(String),

    #[error("residual vanished during the square-root loss solve")]
    DegenerateResidual,
    #[error("observed outcomes lie exactly in the column space at k = {0}")]
    ExactFit(usize),

    #[error("parse error at {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("schema error: {0}")]
    Schema(String),
    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
