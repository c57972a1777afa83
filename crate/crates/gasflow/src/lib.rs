//! Steady-state natural gas network flow solvers.
//!
//! Given a connected network of lossy pipes and ideal compressors with fixed
//! squared pressures on some nodes and fixed injections on the rest, the
//! solvers in this crate compute the full steady state: injections `q`, edge
//! flows `φ`, and squared nodal pressures `ψ`. Four solver families are
//! provided:
//!
//! - constrained energy minimization over flows ([`energy::solve_constrained`]),
//! - unconstrained energy minimization over pressures
//!   ([`energy::solve_unconstrained`]),
//! - a mixed-integer convex relaxation solved by branch and bound with exact
//!   solution recovery on cycles ([`miqcqp`], [`recovery`]),
//! - damped Newton-Raphson on the full equation stack ([`newton`]).
//!
//! Squared pressures are in bar² throughout. Compressor stations expand to an
//! ideal compressor followed by a lossy pipe (see [`network::build_network`]).

pub mod energy;
pub mod error;
pub mod io;
pub mod miqcqp;
pub mod network;
pub mod newton;
pub mod physics;
pub mod recovery;
pub mod topology;

pub use error::{Error, Result};
pub use network::{
    build_network, check_balanced, mass_residual, Boundary, Diagnostics, Edge, EdgeKind, GfSolution,
    GfSpec, Network, Node, RawEdge, RawEdgeKind, RawNode,
};
