//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by network construction, solvers, and instance I/O.
#[derive(Debug, Error)]
pub enum Error {
    // ---- network construction / validation ----
    #[error("network graph is not connected (node {0} unreachable from node 0)")]
    Disconnected(usize),
    #[error("duplicate edge between nodes {from} and {to}")]
    DuplicateEdge { from: usize, to: usize },
    #[error("antiparallel edge: both ({m},{n}) and ({n},{m}) are declared")]
    AntiparallelEdge { m: usize, n: usize },
    #[error("edge {edge}: friction coefficient must be positive, got {value}")]
    NonpositiveFriction { edge: usize, value: f64 },
    #[error("edge {edge}: compression ratio must be positive, got {value}")]
    NonpositiveRatio { edge: usize, value: f64 },
    #[error("edge {edge} references unknown node id {node}")]
    DanglingNode { edge: usize, node: usize },
    #[error("duplicate node id {0}")]
    DuplicateNodeId(usize),
    #[error("node {node}: fixed pressure must be positive, got {value}")]
    NonpositivePressure { node: usize, value: f64 },
    #[error("{0}")]
    InvalidSpec(String),

    // ---- numerics ----
    #[error("dimension mismatch: expected {expected}, got {got} for {what}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("negative squared pressure {value:.6e} produced at node {node}")]
    NegativePressure { node: usize, value: f64 },
    #[error("compressor edge {edge} carries negative flow {value:.6e}")]
    CompressorBackflow { edge: usize, value: f64 },
    #[error("pressures are inconsistent on a cycle (flow recovery residual {0:.3e})")]
    InconsistentPressures(f64),
    #[error("{solver}: did not converge within {max_iter} iterations (last residual {residual:.3e})")]
    NoConvergence {
        solver: &'static str,
        max_iter: usize,
        residual: f64,
    },
    #[error("energy solvers require a compressor-free network")]
    CompressorsUnsupported,
    #[error("energy solvers require exactly one fixed-pressure node, found {0}")]
    MultipleFixedPressure(usize),
    #[error("injections are unbalanced: sum = {0:.6e}")]
    UnbalancedInjections(f64),
    #[error("zero injection difference vector has no monotone path")]
    ZeroInjectionVector,
    #[error("continuous subsolver failed: {0}")]
    SubsolverFailure(String),
    #[error("cycle {cycle}: pressure closure has no sign change over bracket [{lo:.6e}, {hi:.6e}]")]
    NoSignChange { cycle: usize, lo: f64, hi: f64 },
    #[error("cycle {cycle}: bisection did not close within {max_iter} iterations")]
    BisectionCap { cycle: usize, max_iter: usize },
    #[error("bounds must be finite and positive: {0}")]
    InvalidBounds(String),
    #[error("instance is infeasible: {0}")]
    Infeasible(String),

    // ---- instance I/O ----
    #[error("{path}: {message}")]
    Schema { path: String, message: String },
    #[error("instance parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
