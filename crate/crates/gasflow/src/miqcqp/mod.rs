//! Mixed-integer convex relaxation of the steady-state problem.
//!
//! Each lossy pipe gets a binary direction variable x and the pipe law is
//! relaxed to a convex inequality tied to x through McCormick products
//! z = x·ψ. Minimizing the total absolute pressure difference over lossy
//! pipes outside compressor-bearing cycles makes the relaxation exact there,
//! so a branch-and-bound search over x plus the cycle-correction pass in
//! [`crate::recovery`] recovers the true steady state. The relaxation also
//! certifies infeasibility: if it has no solution, neither does the original
//! problem.

mod barrier;
mod bb;
mod model;

pub use barrier::{solve_qcqp, IpmOptions, IpmOutcome};
pub use bb::{minimize, BbOptions, BbStats, RelaxedSolution};
pub use model::{build_model, Bounds, FixedDirections, Model};

use nalgebra::DVector;

use crate::network::{GfSpec, Network};
use crate::topology::CycleBasis;

/// Structural facts that determine how much of the relaxed solution is
/// guaranteed to match the true steady state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConditionReport {
    /// Exactly one fixed-pressure node, so all injections are known up front.
    pub single_fixed_pressure: bool,
    /// No edge belongs to two basis cycles.
    pub edge_disjoint_cycles: bool,
    /// Basis cycle indices containing at least one compressor.
    pub active_cycles: Vec<usize>,
    /// Edges shared by two or more basis cycles.
    pub overlapping_edges: Vec<usize>,
    /// Flows are guaranteed exact outside active cycles (assuming the
    /// solution exhibits no circulation).
    pub partial_exactness: bool,
    /// The relaxation minimizer solves the original problem outright.
    pub full_exactness: bool,
}

/// Evaluate the structural exactness conditions for a network and spec.
pub fn certify_conditions(
    _network: &Network,
    spec: &GfSpec,
    basis: &CycleBasis,
) -> ConditionReport {
    let single_fixed_pressure = spec.fixed_pressure.len() == 1;
    let edge_disjoint_cycles = basis.edge_disjoint();
    let active_cycles = basis.active_cycles();
    let partial_exactness = single_fixed_pressure && edge_disjoint_cycles;
    let full_exactness = partial_exactness && active_cycles.is_empty();
    ConditionReport {
        single_fixed_pressure,
        edge_disjoint_cycles,
        active_cycles,
        overlapping_edges: basis.overlapping_edges.clone(),
        partial_exactness,
        full_exactness,
    }
}

/// Basis cycles around which the given flows circulate (every edge strictly
/// along the cycle orientation, or every edge strictly against it).
pub fn circulating_cycles(basis: &CycleBasis, flows: &DVector<f64>) -> Vec<usize> {
    basis
        .cycles
        .iter()
        .enumerate()
        .filter(|(_, cycle)| {
            let oriented: Vec<f64> = cycle.edges.iter().map(|&(e, s)| s * flows[e]).collect();
            oriented.iter().all(|&v| v > 0.0) || oriented.iter().all(|&v| v < 0.0)
        })
        .map(|(c, _)| c)
        .collect()
}

/// Feasible interval for the product variable z = x·ψ under the McCormick
/// rows, given a (possibly fractional) x ∈ [0, 1] and ψ ∈ [lo, hi].
///
/// Returns (max of the two lower bounds, min of the two upper bounds). For
/// binary x the interval collapses to the exact product x·ψ.
pub fn mccormick_interval(x: f64, psi: f64, lo: f64, hi: f64) -> (f64, f64) {
    let lower = (x * lo).max(psi + (x - 1.0) * hi);
    let upper = (x * hi).min(psi + (x - 1.0) * lo);
    (lower, upper)
}
