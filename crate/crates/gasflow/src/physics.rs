//! Edge pressure laws and the coupled equation stack.
//!
//! Lossy pipes obey ψ_m − ψ_n = a·sign(φ)·φ² and ideal compressors obey
//! ψ_n = α·ψ_m with φ ≥ 0, all in squared pressures. This module evaluates
//! those laws, propagates pressures over spanning trees, recovers flows from
//! pressures, and assembles the residual/Jacobian stack used by the
//! Newton-Raphson solver and by feasibility checks.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{EdgeKind, GfSpec, Network};
use crate::topology::SpanningTree;

/// Squared-pressure drop across a lossy pipe: a·sign(φ)·φ².
pub fn pressure_drop(friction: f64, flow: f64) -> f64 {
    friction * flow.signum() * flow * flow
}

/// Invert the pipe law: the flow producing a given squared-pressure drop,
/// sign(Δψ)·√(|Δψ|/a).
pub fn flow_from_drop(friction: f64, drop: f64) -> f64 {
    drop.signum() * (drop.abs() / friction).sqrt()
}

/// Pressures implied by flows along a spanning tree, plus the law residual on
/// every chord.
#[derive(Debug, Clone)]
pub struct Propagated {
    pub pressures: DVector<f64>,
    /// (chord edge id, law residual at the propagated pressures). All zero
    /// iff the flows and the root pressure describe an exact steady state.
    pub chord_mismatch: Vec<(usize, f64)>,
    /// Smallest propagated squared pressure; negative values mean the flows
    /// are not physically realizable from this root pressure.
    pub min_pressure: f64,
}

/// Walk the spanning tree from its root, applying each edge law to the given
/// flows, and report the law residual on every chord.
///
/// Propagation never fails on negative squared pressures; callers inspect
/// [`Propagated::min_pressure`] to decide feasibility.
pub fn propagate_pressures(
    network: &Network,
    tree: &SpanningTree,
    root_pressure: f64,
    flows: &DVector<f64>,
) -> Result<Propagated> {
    if flows.len() != network.edge_count() {
        return Err(Error::DimensionMismatch {
            what: "flow vector",
            expected: network.edge_count(),
            got: flows.len(),
        });
    }
    let mut pressures = DVector::zeros(network.node_count());
    pressures[tree.root] = root_pressure;
    for &node in &tree.preorder {
        let Some((parent, eid)) = tree.parent[node] else {
            continue;
        };
        let e = network.edge(eid);
        let forward = e.from == parent && e.to == node;
        pressures[node] = match e.kind {
            EdgeKind::Pipe { friction } => {
                let drop = pressure_drop(friction, flows[eid]);
                if forward {
                    pressures[parent] - drop
                } else {
                    pressures[parent] + drop
                }
            }
            EdgeKind::Compressor { ratio } => {
                if forward {
                    ratio * pressures[parent]
                } else {
                    pressures[parent] / ratio
                }
            }
        };
    }
    let chord_mismatch = tree
        .chords
        .iter()
        .map(|&eid| (eid, law_residual(network.edge(eid), flows[eid], &pressures)))
        .collect();
    let min_pressure = pressures.min();
    Ok(Propagated {
        pressures,
        chord_mismatch,
        min_pressure,
    })
}

/// Residual of one edge law at the given state: zero iff the edge is exact.
pub fn law_residual(edge: &crate::network::Edge, flow: f64, pressures: &DVector<f64>) -> f64 {
    match edge.kind {
        EdgeKind::Pipe { friction } => {
            pressures[edge.from] - pressures[edge.to] - pressure_drop(friction, flow)
        }
        EdgeKind::Compressor { ratio } => pressures[edge.to] - ratio * pressures[edge.from],
    }
}

/// Recover all edge flows from a full squared-pressure vector.
///
/// Pipe flows invert the pipe law directly. Compressor flows do not follow
/// from pressures, so they are recovered from mass balance at the
/// known-injection nodes by least squares; an inconsistent system (residual
/// above 1e−6 relative to the injection scale) is an error.
pub fn flows_from_pressures(
    network: &Network,
    spec: &GfSpec,
    pressures: &DVector<f64>,
) -> Result<DVector<f64>> {
    if pressures.len() != network.node_count() {
        return Err(Error::DimensionMismatch {
            what: "pressure vector",
            expected: network.node_count(),
            got: pressures.len(),
        });
    }
    let mut flows = DVector::zeros(network.edge_count());
    for e in network.pipe_edges() {
        let friction = e.friction().unwrap();
        flows[e.id] = flow_from_drop(friction, pressures[e.from] - pressures[e.to]);
    }
    let comps: Vec<usize> = network.compressor_edges().map(|e| e.id).collect();
    if comps.is_empty() {
        return Ok(flows);
    }
    // Mass balance rows at nodes with known injection; unknowns are the
    // compressor flows, with pipe contributions moved to the right-hand side.
    let mut rows = Vec::new();
    for node in network.nodes() {
        let Some(q) = spec.injection(network, node.id) else {
            continue;
        };
        rows.push((node.id, q));
    }
    let mut a = DMatrix::zeros(rows.len(), comps.len());
    let mut b = DVector::zeros(rows.len());
    for (r, &(node, q)) in rows.iter().enumerate() {
        b[r] = q;
        for &(eid, _) in network.adjacency(node) {
            let e = network.edge(eid);
            let sign = if e.from == node { 1.0 } else { -1.0 };
            if let Some(c) = comps.iter().position(|&ce| ce == eid) {
                a[(r, c)] += sign;
            } else {
                b[r] -= sign * flows[eid];
            }
        }
    }
    let scale = b.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let svd = a.clone().svd(true, true);
    let x = svd
        .solve(&b, 1e-12)
        .map_err(|e| Error::SubsolverFailure(e.to_string()))?;
    let resid = (&a * &x - &b).amax();
    if resid > 1e-6 * scale {
        return Err(Error::InconsistentPressures(resid));
    }
    for (c, &eid) in comps.iter().enumerate() {
        flows[eid] = x[c];
    }
    Ok(flows)
}

/// Layout of the square residual stack g(y) and its variables
/// y = [φ₀..φ_{P−1}, ψ_n for n ≠ reference in ascending node order].
///
/// Rows, in order:
/// 1. for every non-reference node in ascending order: a mass-balance row
///    Aᵀφ|_n − q_n at known-injection nodes, or a pressure-pin row ψ_n − ψ̄_n
///    at non-reference fixed-pressure nodes;
/// 2. for every edge in ascending order: its law residual.
///
/// The reference pressure is a constant, not a variable; `pressures` must
/// carry it in its slot.
#[derive(Debug, Clone)]
pub struct StateLayout {
    /// Non-reference node ids in ascending order; ψ column k corresponds to
    /// `free_nodes[k]` (offset by P).
    pub free_nodes: Vec<usize>,
    pub reference: usize,
}

impl StateLayout {
    pub fn new(network: &Network, spec: &GfSpec) -> Self {
        let free_nodes = (0..network.node_count())
            .filter(|&n| n != spec.reference)
            .collect();
        StateLayout {
            free_nodes,
            reference: spec.reference,
        }
    }

    pub fn dim(&self, network: &Network) -> usize {
        network.edge_count() + self.free_nodes.len()
    }

    /// Pack (φ, ψ) into a state vector, dropping the reference pressure.
    pub fn pack(&self, flows: &DVector<f64>, pressures: &DVector<f64>) -> DVector<f64> {
        let p = flows.len();
        let mut y = DVector::zeros(p + self.free_nodes.len());
        y.rows_mut(0, p).copy_from(flows);
        for (k, &n) in self.free_nodes.iter().enumerate() {
            y[p + k] = pressures[n];
        }
        y
    }

    /// Unpack a state vector into full (φ, ψ), restoring the reference slot.
    pub fn unpack(
        &self,
        network: &Network,
        reference_pressure: f64,
        y: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        let p = network.edge_count();
        let flows = y.rows(0, p).into_owned();
        let mut pressures = DVector::zeros(network.node_count());
        pressures[self.reference] = reference_pressure;
        for (k, &n) in self.free_nodes.iter().enumerate() {
            pressures[n] = y[p + k];
        }
        (flows, pressures)
    }
}

/// Evaluate the residual stack g at full (φ, ψ).
pub fn residual(
    network: &Network,
    spec: &GfSpec,
    flows: &DVector<f64>,
    pressures: &DVector<f64>,
) -> DVector<f64> {
    let layout = StateLayout::new(network, spec);
    let p = network.edge_count();
    let mut g = DVector::zeros(layout.dim(network));
    let div = network.divergence(flows);
    for (r, &n) in layout.free_nodes.iter().enumerate() {
        g[r] = match spec.injection(network, n) {
            Some(q) => div[n] - q,
            None => pressures[n] - spec.fixed_pressure[&n],
        };
    }
    let base = layout.free_nodes.len();
    for e in network.edges() {
        g[base + e.id] = law_residual(e, flows[e.id], pressures);
    }
    let _ = p;
    g
}

/// Evaluate the residual stack and its Jacobian with respect to
/// y = [φ, ψ_free].
pub fn residual_and_jacobian(
    network: &Network,
    spec: &GfSpec,
    flows: &DVector<f64>,
    pressures: &DVector<f64>,
) -> (DVector<f64>, DMatrix<f64>) {
    let layout = StateLayout::new(network, spec);
    let p = network.edge_count();
    let dim = layout.dim(network);
    let g = residual(network, spec, flows, pressures);
    let mut jac = DMatrix::zeros(dim, dim);
    // Column index of ψ_n, if free.
    let psi_col = |n: usize| -> Option<usize> {
        layout.free_nodes.binary_search(&n).ok().map(|k| p + k)
    };
    for (r, &n) in layout.free_nodes.iter().enumerate() {
        if spec.injection(network, n).is_some() {
            for &(eid, _) in network.adjacency(n) {
                let e = network.edge(eid);
                jac[(r, eid)] += if e.from == n { 1.0 } else { -1.0 };
            }
        } else {
            jac[(r, psi_col(n).unwrap())] = 1.0;
        }
    }
    let base = layout.free_nodes.len();
    for e in network.edges() {
        let r = base + e.id;
        match e.kind {
            EdgeKind::Pipe { friction } => {
                jac[(r, e.id)] = -2.0 * friction * flows[e.id].abs();
                if let Some(c) = psi_col(e.from) {
                    jac[(r, c)] += 1.0;
                }
                if let Some(c) = psi_col(e.to) {
                    jac[(r, c)] -= 1.0;
                }
            }
            EdgeKind::Compressor { ratio } => {
                if let Some(c) = psi_col(e.to) {
                    jac[(r, c)] += 1.0;
                }
                if let Some(c) = psi_col(e.from) {
                    jac[(r, c)] -= ratio;
                }
            }
        }
    }
    (g, jac)
}

/// Relative slack of the pipe law left by a relaxation-based solution:
/// max over lossy pipes of (|Δψ| − aφ²)/(aφ²).
///
/// Returns (gap clamped at zero, signed gap). Pipes with aφ² below 1e−12
/// are scored against an absolute floor of 1e−6 on |Δψ| so that zero-flow
/// pipes with a genuine pressure difference still register.
pub fn exactness_gap(
    network: &Network,
    flows: &DVector<f64>,
    pressures: &DVector<f64>,
) -> (f64, f64) {
    let mut signed = f64::NEG_INFINITY;
    let mut any = false;
    for e in network.pipe_edges() {
        let friction = e.friction().unwrap();
        let ideal = friction * flows[e.id] * flows[e.id];
        let drop = (pressures[e.from] - pressures[e.to]).abs();
        let v = if ideal < 1e-12 {
            (drop - 1e-6) / 1e-6
        } else {
            (drop - ideal) / ideal
        };
        signed = signed.max(v);
        any = true;
    }
    if !any {
        return (0.0, 0.0);
    }
    (signed.max(0.0), signed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, Boundary, RawEdge, RawEdgeKind, RawNode};
    use crate::topology::spanning_tree;
    use approx::assert_relative_eq;

    fn inj(label: usize, q: f64) -> RawNode {
        RawNode {
            label,
            boundary: Boundary::Injection(q),
        }
    }

    fn press(label: usize, psi: f64) -> RawNode {
        RawNode {
            label,
            boundary: Boundary::Pressure(psi),
        }
    }

    fn pipe(from: usize, to: usize, friction: f64) -> RawEdge {
        RawEdge {
            from,
            to,
            kind: RawEdgeKind::Pipe { friction },
        }
    }

    #[test]
    fn pipe_law_round_trips() {
        for &(a, phi) in &[(0.05, 3.0), (2.0, -1.5), (1.0, 0.0), (0.3, 12.0)] {
            let drop = pressure_drop(a, phi);
            assert_relative_eq!(flow_from_drop(a, drop), phi, max_relative = 1e-14);
        }
        assert_eq!(pressure_drop(2.0, 3.0), 18.0);
        assert_eq!(pressure_drop(2.0, -3.0), -18.0);
    }

    #[test]
    fn propagation_on_a_two_pipe_path() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -2.0)],
            &[pipe(1, 2, 1.0), pipe(2, 3, 2.0)],
        )
        .unwrap();
        let tree = spanning_tree(&net, 0);
        let flows = DVector::from_vec(vec![2.0, 2.0]);
        let prop = propagate_pressures(&net, &tree, 25.0, &flows).unwrap();
        assert_eq!(prop.pressures.as_slice(), &[25.0, 21.0, 13.0]);
        assert!(prop.chord_mismatch.is_empty());
        assert_eq!(prop.min_pressure, 13.0);
    }

    #[test]
    fn propagation_against_edge_orientation() {
        // Edge declared 2→1 while the tree walks 1→2.
        let net = build_network(
            &[press(1, 25.0), inj(2, 3.0)],
            &[pipe(2, 1, 1.0)],
        )
        .unwrap();
        let tree = spanning_tree(&net, 0);
        let flows = DVector::from_vec(vec![3.0]);
        let prop = propagate_pressures(&net, &tree, 25.0, &flows).unwrap();
        // ψ₂ − ψ₁ = 9 so ψ₂ = 34.
        assert_eq!(prop.pressures.as_slice(), &[25.0, 34.0]);
    }

    #[test]
    fn propagation_through_a_compressor() {
        let net = build_network(
            &[press(1, 20.0), inj(2, -1.0)],
            &[RawEdge {
                from: 1,
                to: 2,
                kind: RawEdgeKind::Compressor { ratio: 1.5 },
            }],
        )
        .unwrap();
        let tree = spanning_tree(&net, 0);
        let prop = propagate_pressures(&net, &tree, 20.0, &DVector::from_vec(vec![1.0])).unwrap();
        assert_eq!(prop.pressures.as_slice(), &[20.0, 30.0]);
    }

    #[test]
    fn chord_mismatch_reports_law_violation() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -3.0)],
            &[pipe(1, 2, 1.0), pipe(2, 3, 1.0), pipe(1, 3, 1.0)],
        )
        .unwrap();
        let tree = spanning_tree(&net, 0);
        // Tree edges 0, 1; chord 2. Flows exact on the tree but wrong on the
        // chord: Δψ over edge 2 is 25 − 17 = 8 yet a·φ² = 1.
        let flows = DVector::from_vec(vec![2.0, 2.0, 1.0]);
        let prop = propagate_pressures(&net, &tree, 25.0, &flows).unwrap();
        assert_eq!(prop.chord_mismatch.len(), 1);
        let (chord, mismatch) = prop.chord_mismatch[0];
        assert_eq!(chord, 2);
        assert_relative_eq!(mismatch, 8.0 - 1.0, max_relative = 1e-14);
    }

    #[test]
    fn flows_recover_from_pressures_on_pipes() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -2.0)],
            &[pipe(1, 2, 1.0), pipe(2, 3, 2.0)],
        )
        .unwrap();
        let spec = crate::network::GfSpec::from_network(&net, 1).unwrap();
        let pressures = DVector::from_vec(vec![25.0, 21.0, 13.0]);
        let flows = flows_from_pressures(&net, &spec, &pressures).unwrap();
        assert_relative_eq!(flows[0], 2.0, max_relative = 1e-14);
        assert_relative_eq!(flows[1], 2.0, max_relative = 1e-14);
    }

    #[test]
    fn compressor_flow_recovered_from_mass_balance() {
        // 1 →pipe→ 2 →compressor→ 3, demand at 3.
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -2.0)],
            &[
                pipe(1, 2, 1.0),
                RawEdge {
                    from: 2,
                    to: 3,
                    kind: RawEdgeKind::Compressor { ratio: 2.0 },
                },
            ],
        )
        .unwrap();
        let spec = crate::network::GfSpec::from_network(&net, 1).unwrap();
        let pressures = DVector::from_vec(vec![25.0, 21.0, 42.0]);
        let flows = flows_from_pressures(&net, &spec, &pressures).unwrap();
        assert_relative_eq!(flows[0], 2.0, max_relative = 1e-12);
        assert_relative_eq!(flows[1], 2.0, max_relative = 1e-12);
    }

    #[test]
    fn inconsistent_pressures_are_rejected() {
        // Same network, but pipe pressures imply inflow 3 at node 2 while the
        // demand at node 3 pulls 2: no compressor flow satisfies both.
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -2.0)],
            &[
                pipe(1, 2, 1.0),
                RawEdge {
                    from: 2,
                    to: 3,
                    kind: RawEdgeKind::Compressor { ratio: 2.0 },
                },
            ],
        )
        .unwrap();
        let spec = crate::network::GfSpec::from_network(&net, 1).unwrap();
        let pressures = DVector::from_vec(vec![25.0, 16.0, 32.0]);
        assert!(matches!(
            flows_from_pressures(&net, &spec, &pressures).unwrap_err(),
            Error::InconsistentPressures(_)
        ));
    }

    #[test]
    fn residual_vanishes_at_an_exact_state() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -2.0)],
            &[pipe(1, 2, 1.0), pipe(2, 3, 2.0)],
        )
        .unwrap();
        let spec = crate::network::GfSpec::from_network(&net, 1).unwrap();
        let flows = DVector::from_vec(vec![2.0, 2.0]);
        let pressures = DVector::from_vec(vec![25.0, 21.0, 13.0]);
        let g = residual(&net, &spec, &flows, &pressures);
        assert!(g.amax() < 1e-14, "g = {g:?}");
    }

    #[test]
    fn jacobian_matches_finite_differences() {
        // Mixed network: two pipes, one compressor, one extra fixed pressure.
        let net = build_network(
            &[press(1, 25.0), inj(2, 1.0), press(3, 30.0), inj(4, -2.5)],
            &[
                pipe(1, 2, 0.7),
                RawEdge {
                    from: 2,
                    to: 3,
                    kind: RawEdgeKind::Compressor { ratio: 1.8 },
                },
                pipe(3, 4, 1.3),
            ],
        )
        .unwrap();
        let spec = crate::network::GfSpec::from_network(&net, 1).unwrap();
        let layout = StateLayout::new(&net, &spec);
        let flows = DVector::from_vec(vec![1.7, -0.4, 2.2]);
        let pressures = DVector::from_vec(vec![25.0, 18.0, 31.0, 24.0]);
        let (_, jac) = residual_and_jacobian(&net, &spec, &flows, &pressures);
        let y0 = layout.pack(&flows, &pressures);
        let h = 1e-6;
        for col in 0..y0.len() {
            let mut yp = y0.clone();
            let mut ym = y0.clone();
            yp[col] += h;
            ym[col] -= h;
            let (fp, pp) = layout.unpack(&net, spec.reference_pressure(), &yp);
            let (fm, pm) = layout.unpack(&net, spec.reference_pressure(), &ym);
            let gp = residual(&net, &spec, &fp, &pp);
            let gm = residual(&net, &spec, &fm, &pm);
            let fd = (gp - gm) / (2.0 * h);
            for row in 0..fd.len() {
                assert!(
                    (jac[(row, col)] - fd[row]).abs() < 1e-5,
                    "J[{row},{col}] = {} vs fd {}",
                    jac[(row, col)],
                    fd[row]
                );
            }
        }
    }

    #[test]
    fn pipe_jacobian_entry_is_zero_at_zero_flow() {
        let net = build_network(&[press(1, 25.0), inj(2, 0.0)], &[pipe(1, 2, 3.0)]).unwrap();
        let spec = crate::network::GfSpec::from_network(&net, 1).unwrap();
        let flows = DVector::from_vec(vec![0.0]);
        let pressures = DVector::from_vec(vec![25.0, 25.0]);
        let (_, jac) = residual_and_jacobian(&net, &spec, &flows, &pressures);
        // Pipe law row is the last; its flow derivative −2a|φ| vanishes.
        assert_eq!(jac[(1, 0)], 0.0);
    }

    #[test]
    fn gap_is_zero_on_exact_states_and_positive_on_slack() {
        let net = build_network(
            &[press(1, 25.0), inj(2, -2.0)],
            &[pipe(1, 2, 1.0)],
        )
        .unwrap();
        let flows = DVector::from_vec(vec![2.0]);
        let exact = DVector::from_vec(vec![25.0, 21.0]);
        let (gap, signed) = exactness_gap(&net, &flows, &exact);
        assert!(gap.abs() < 1e-12);
        assert!(signed.abs() < 1e-12);
        // 50% more drop than the law requires.
        let slack = DVector::from_vec(vec![25.0, 19.0]);
        let (gap, signed) = exactness_gap(&net, &flows, &slack);
        assert_relative_eq!(gap, 0.5, max_relative = 1e-12);
        assert_relative_eq!(signed, 0.5, max_relative = 1e-12);
    }

    #[test]
    fn gap_guards_zero_flow_pipes() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0)],
            &[pipe(1, 2, 1.0)],
        )
        .unwrap();
        let flows = DVector::from_vec(vec![0.0]);
        // Zero flow with a real pressure difference must register.
        let (gap, _) = exactness_gap(&net, &flows, &DVector::from_vec(vec![25.0, 20.0]));
        assert!(gap > 1.0);
        // Zero flow with matching pressures is clean.
        let (gap, signed) = exactness_gap(&net, &flows, &DVector::from_vec(vec![25.0, 25.0]));
        assert_eq!(gap, 0.0);
        assert!(signed <= 0.0);
    }
}
