use thiserror::Error;

/// Errors surfaced by graph construction, spectral routines, the optimizers
/// and the simulation layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("edge list parse error at line {line}: {reason}")]
    EdgeListParse { line: usize, reason: String },

    #[error("graph is disconnected")]
    Disconnected,

    #[error("matrix is not square: {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("matrix asymmetry {asym:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { asym: f64, tol: f64 },

    #[error("eigenvalue iteration failed to converge")]
    EigenNoConvergence,

    #[error("power {p} is invalid here: {reason}")]
    InvalidPower { p: usize, reason: String },

    #[error("weight vector has length {got}, graph has {expected} edges")]
    WeightLengthMismatch { got: usize, expected: usize },

    #[error("edge index {0} out of range")]
    InvalidEdge(usize),

    #[error("node index {0} out of range")]
    InvalidNode(usize),

    #[error("subgraph is too small to evaluate the gradient: {0}")]
    InsufficientRadius(String),

    #[error("subgraph belongs to a different parent graph")]
    SubgraphParentMismatch,

    #[error("invalid step schedule: a={a}, b={b} (need a > 0 and b >= 0)")]
    InvalidSchedule { a: f64, b: f64 },

    #[error("non-finite {what} at iteration {k}")]
    NonFinite { what: String, k: usize },

    #[error("graph has {n} nodes, above the oracle limit of {max}")]
    OracleTooLarge { n: usize, max: usize },

    #[error("infeasible node projection: delta {delta} * degree {degree} > 1")]
    InfeasibleProjection { delta: f64, degree: usize },

    #[error("protocol fault: {0}")]
    ProtocolFault(String),

    #[error("invalid experiment config: {0}")]
    InvalidConfig(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
