//! Graph-topology services: spanning trees, fundamental cycle bases,
//! circulation detection, and monotone flow-path decomposition.
//!
//! Everything here is deterministic: traversals visit neighbours in ascending
//! edge-id order, so repeated runs on the same network produce identical
//! trees, cycle bases, and decompositions.

use std::collections::VecDeque;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::network::Network;

/// Rooted spanning tree of the (undirected view of the) network.
#[derive(Debug, Clone)]
pub struct SpanningTree {
    pub root: usize,
    /// Per node: `Some((parent node, connecting edge id))`, `None` at the root.
    pub parent: Vec<Option<(usize, usize)>>,
    /// Nodes in depth-first preorder starting at the root.
    pub preorder: Vec<usize>,
    /// Edge ids of the N−1 tree edges, ascending.
    pub tree_edges: Vec<usize>,
    /// Edge ids not in the tree (the chords), ascending.
    pub chords: Vec<usize>,
}

impl SpanningTree {
    pub fn is_tree_edge(&self, edge: usize) -> bool {
        self.tree_edges.binary_search(&edge).is_ok()
    }
}

/// Depth-first spanning tree rooted at `root`, exploring incident edges in
/// ascending edge-id order.
pub fn spanning_tree(network: &Network, root: usize) -> SpanningTree {
    let n = network.node_count();
    assert!(root < n, "root {root} out of range for {n} nodes");
    let mut parent = vec![None; n];
    let mut visited = vec![false; n];
    let mut preorder = Vec::with_capacity(n);
    let mut tree_edges = Vec::with_capacity(n.saturating_sub(1));
    // Explicit stack of (node, next adjacency offset) for a deterministic DFS.
    let mut stack = vec![(root, 0usize)];
    visited[root] = true;
    preorder.push(root);
    while let Some(&mut (node, ref mut offset)) = stack.last_mut() {
        let adj = network.adjacency(node);
        if *offset >= adj.len() {
            stack.pop();
            continue;
        }
        let (edge, other) = adj[*offset];
        *offset += 1;
        if !visited[other] {
            visited[other] = true;
            parent[other] = Some((node, edge));
            preorder.push(other);
            tree_edges.push(edge);
            stack.push((other, 0));
        }
    }
    debug_assert_eq!(preorder.len(), n, "network must be connected");
    tree_edges.sort_unstable();
    let chords = (0..network.edge_count())
        .filter(|e| tree_edges.binary_search(e).is_err())
        .collect();
    SpanningTree {
        root,
        parent,
        preorder,
        tree_edges,
        chords,
    }
}

/// One fundamental cycle: the chord plus the tree path closing it.
#[derive(Debug, Clone)]
pub struct Cycle {
    /// The non-tree edge that generates this cycle.
    pub chord: usize,
    /// Edges around the cycle in traversal order, starting with the chord.
    /// The sign is +1 where the edge direction agrees with the traversal
    /// (which follows the chord's own direction) and −1 where it opposes.
    pub edges: Vec<(usize, f64)>,
    /// Contains at least one compressor edge.
    pub active: bool,
}

impl Cycle {
    pub fn contains(&self, edge: usize) -> bool {
        self.edges.iter().any(|&(e, _)| e == edge)
    }

    pub fn sign_of(&self, edge: usize) -> Option<f64> {
        self.edges.iter().find(|&&(e, _)| e == edge).map(|&(_, s)| s)
    }

    /// Nodes in traversal order; node k is the tail of `edges[k]` in the
    /// walking direction, so the sequence has one entry per edge and wraps.
    pub fn node_sequence(&self, network: &Network) -> Vec<usize> {
        self.edges
            .iter()
            .map(|&(e, s)| {
                let edge = network.edge(e);
                if s > 0.0 {
                    edge.from
                } else {
                    edge.to
                }
            })
            .collect()
    }

    /// The same traversal rotated to start at `anchor`, which must lie on
    /// the cycle.
    pub fn rotated(&self, network: &Network, anchor: usize) -> Option<Vec<(usize, f64)>> {
        let nodes = self.node_sequence(network);
        let k = nodes.iter().position(|&n| n == anchor)?;
        let mut out = Vec::with_capacity(self.edges.len());
        out.extend_from_slice(&self.edges[k..]);
        out.extend_from_slice(&self.edges[..k]);
        Some(out)
    }
}

/// Fundamental cycle basis of the network relative to a spanning tree.
#[derive(Debug, Clone)]
pub struct CycleBasis {
    pub cycles: Vec<Cycle>,
    /// Edge ids that belong to two or more basis cycles.
    pub overlapping_edges: Vec<usize>,
    /// Per edge id: number of basis cycles containing it. Zero marks a
    /// bridge, whose flow is the same in every mass-balanced assignment.
    pub membership: Vec<usize>,
}

impl CycleBasis {
    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    /// Indices of cycles containing a compressor edge.
    pub fn active_cycles(&self) -> Vec<usize> {
        (0..self.cycles.len()).filter(|&c| self.cycles[c].active).collect()
    }

    /// True iff no edge belongs to more than one basis cycle.
    pub fn edge_disjoint(&self) -> bool {
        self.overlapping_edges.is_empty()
    }

    /// Cycle-space signs as a dense P×C matrix (entry (ℓ, c) is the sign of
    /// edge ℓ in cycle c, or 0).
    pub fn edge_cycle_signs(&self, edge_count: usize) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(edge_count, self.cycles.len());
        for (c, cycle) in self.cycles.iter().enumerate() {
            for &(e, s) in &cycle.edges {
                m[(e, c)] = s;
            }
        }
        m
    }
}

/// Tree path from `from` up-and-down to `to` as (edge id, sign) pairs, where
/// the sign is +1 if the edge points along the walking direction.
fn tree_path(network: &Network, tree: &SpanningTree, from: usize, to: usize) -> Vec<(usize, f64)> {
    // Climb both endpoints to the root recording their ancestor chains.
    let chain = |mut node: usize| {
        let mut c = vec![node];
        while let Some((p, _)) = tree.parent[node] {
            node = p;
            c.push(node);
        }
        c
    };
    let ca = chain(from);
    let cb = chain(to);
    // Lowest common ancestor: longest shared suffix.
    let mut i = ca.len();
    let mut j = cb.len();
    while i > 0 && j > 0 && ca[i - 1] == cb[j - 1] {
        i -= 1;
        j -= 1;
    }
    let lca_a = i; // ca[lca_a] is the LCA (or from itself when i == 0 and chain shrank)
    let mut path = Vec::new();
    // Walk from `from` up to the LCA.
    for k in 0..lca_a {
        let node = ca[k];
        let (parent, edge) = tree.parent[node].unwrap();
        let e = network.edge(edge);
        // Walking node → parent.
        let sign = if e.from == node && e.to == parent { 1.0 } else { -1.0 };
        path.push((edge, sign));
    }
    // Walk from the LCA down to `to` (reverse of climbing `to` to the LCA).
    for k in (0..j).rev() {
        let node = cb[k];
        let (parent, edge) = tree.parent[node].unwrap();
        let e = network.edge(edge);
        // Walking parent → node.
        let sign = if e.from == parent && e.to == node { 1.0 } else { -1.0 };
        path.push((edge, sign));
    }
    path
}

/// Fundamental cycles induced by the chords of `tree`, in ascending chord id.
///
/// Each cycle starts at the chord (sign +1) and closes through the tree path
/// from the chord's head back to its tail.
pub fn fundamental_cycles(network: &Network, tree: &SpanningTree) -> CycleBasis {
    let mut cycles = Vec::with_capacity(tree.chords.len());
    let mut membership = vec![0usize; network.edge_count()];
    for &chord in &tree.chords {
        let e = network.edge(chord);
        let mut edges = vec![(chord, 1.0)];
        edges.extend(tree_path(network, tree, e.to, e.from));
        let active = edges
            .iter()
            .any(|&(eid, _)| network.edge(eid).is_compressor());
        for &(eid, _) in &edges {
            membership[eid] += 1;
        }
        cycles.push(Cycle {
            chord,
            edges,
            active,
        });
    }
    let overlapping_edges = (0..network.edge_count())
        .filter(|&e| membership[e] >= 2)
        .collect();
    CycleBasis {
        cycles,
        overlapping_edges,
        membership,
    }
}

/// The unique flows on a spanning tree that balance the given injections
/// when all chord flows are zero, computed by subtree sums.
///
/// This is a particular solution of Aᵀφ = q; on bridges it is the flow of
/// every solution, since circulations vanish there.
pub fn tree_flows(
    network: &Network,
    tree: &SpanningTree,
    injections: &DVector<f64>,
) -> DVector<f64> {
    let mut subtree: Vec<f64> = injections.iter().copied().collect();
    let mut flows = DVector::zeros(network.edge_count());
    for &node in tree.preorder.iter().rev() {
        let Some((parent, eid)) = tree.parent[node] else {
            continue;
        };
        let e = network.edge(eid);
        flows[eid] = if e.from == parent && e.to == node {
            -subtree[node]
        } else {
            subtree[node]
        };
        subtree[parent] += subtree[node];
    }
    flows
}

/// A circulation: a flow vector that is nonzero yet injects nothing anywhere.
///
/// Returns a generator of the circulation space if the zero-injection flow
/// subproblem admits one, built from any fundamental cycle. With zero
/// injections every cycle supports a circulation, so this returns the first
/// basis cycle's indicator when the network has cycles and `None` on trees.
pub fn detect_circulation(network: &Network) -> Option<DVector<f64>> {
    let tree = spanning_tree(network, 0);
    let basis = fundamental_cycles(network, &tree);
    basis.cycles.first().map(|cycle| {
        let mut v = DVector::zeros(network.edge_count());
        for &(e, s) in &cycle.edges {
            v[e] = s;
        }
        v
    })
}

/// A source-to-sink path along which a flow change moves uniformly.
#[derive(Debug, Clone)]
pub struct MonotonePath {
    /// Traversal sign per edge: +1 with the edge, −1 against it, 0 off path.
    pub indicator: DVector<f64>,
    /// Node sequence from source to sink.
    pub nodes: Vec<usize>,
}

impl MonotonePath {
    /// First node of the walk; carries positive injection change.
    pub fn source(&self) -> usize {
        self.nodes[0]
    }

    /// Last node of the walk; carries negative injection change.
    pub fn sink(&self) -> usize {
        *self.nodes.last().unwrap()
    }
}

/// Extract a path certifying how an injection change redistributes flow.
///
/// `q_tilde` is a nonzero balanced injection change and `pattern` a flow
/// change with divergence `q_tilde` (both typically differences of two
/// mass-balanced states). The returned walk starts at a node with positive
/// `q_tilde`, ends at a node with negative `q_tilde`, and traverses every
/// edge along the direction of its pattern flow, so
/// `pattern ∘ indicator > 0` on the path. Conceptually the search augments
/// the graph with a super-source feeding the surplus nodes and a super-sink
/// draining the deficit nodes, then walks flow-directed edges between them;
/// breadth-first order with ties broken toward the lowest edge id makes the
/// choice deterministic.
pub fn monotone_path_decompose(
    network: &Network,
    pattern: &DVector<f64>,
    q_tilde: &DVector<f64>,
) -> Result<MonotonePath> {
    let n = network.node_count();
    let p = network.edge_count();
    if pattern.len() != p {
        return Err(Error::DimensionMismatch {
            what: "flow pattern",
            expected: p,
            got: pattern.len(),
        });
    }
    if q_tilde.len() != n {
        return Err(Error::DimensionMismatch {
            what: "injection vector",
            expected: n,
            got: q_tilde.len(),
        });
    }
    if !crate::network::check_balanced(q_tilde) {
        return Err(Error::UnbalancedInjections(q_tilde.iter().sum()));
    }
    let scale = q_tilde.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    let mismatch = (network.divergence(pattern) - q_tilde).amax();
    if mismatch > 1e-9 * scale {
        return Err(Error::InvalidSpec(format!(
            "flow pattern does not produce the given injections (worst node off by {mismatch:e})"
        )));
    }
    if q_tilde.amax() <= tol {
        return Err(Error::InvalidSpec(
            "injection change is zero; no redistribution path exists".into(),
        ));
    }

    // Multi-source BFS from every surplus node along flow-directed edges,
    // stopping at the first deficit node discovered.
    let mut pred: Vec<Option<(usize, usize, f64)>> = vec![None; n]; // (prev node, edge, dir)
    let mut seen = vec![false; n];
    let mut queue = VecDeque::new();
    for (node, &q) in q_tilde.iter().enumerate() {
        if q > tol {
            seen[node] = true;
            queue.push_back(node);
        }
    }
    let mut sink = None;
    'bfs: while let Some(node) = queue.pop_front() {
        for &(edge, other) in network.adjacency(node) {
            if seen[other] {
                continue;
            }
            // Direction +1 moves from→to, −1 moves to→from; the path may
            // only ride edges whose pattern flow points the same way.
            let dir = if network.edge(edge).from == node { 1.0 } else { -1.0 };
            if pattern[edge] * dir <= tol {
                continue;
            }
            seen[other] = true;
            pred[other] = Some((node, edge, dir));
            if q_tilde[other] < -tol {
                sink = Some(other);
                break 'bfs;
            }
            queue.push_back(other);
        }
    }
    let Some(sink) = sink else {
        return Err(Error::InvalidSpec(
            "no flow-directed path from any surplus node to a deficit node".into(),
        ));
    };

    let mut indicator = DVector::zeros(p);
    let mut nodes = vec![sink];
    let mut node = sink;
    while let Some((prev, edge, dir)) = pred[node] {
        indicator[edge] = dir;
        nodes.push(prev);
        node = prev;
    }
    nodes.reverse();
    Ok(MonotonePath { indicator, nodes })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, Boundary, RawEdge, RawEdgeKind, RawNode};
    use nalgebra::DVector;

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

    fn pipe(from: usize, to: usize) -> RawEdge {
        RawEdge {
            from,
            to,
            kind: RawEdgeKind::Pipe { friction: 1.0 },
        }
    }

    fn comp(from: usize, to: usize) -> RawEdge {
        RawEdge {
            from,
            to,
            kind: RawEdgeKind::Compressor { ratio: 1.5 },
        }
    }

    /// Triangle 1→2, 2→3, 1→3.
    fn triangle() -> Network {
        build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -3.0)],
            &[pipe(1, 2), pipe(2, 3), pipe(1, 3)],
        )
        .unwrap()
    }

    #[test]
    fn tree_on_triangle_takes_lowest_edge_ids() {
        let net = triangle();
        let tree = spanning_tree(&net, 0);
        assert_eq!(tree.tree_edges, vec![0, 1]);
        assert_eq!(tree.chords, vec![2]);
        assert_eq!(tree.preorder, vec![0, 1, 2]);
        assert_eq!(tree.parent[1], Some((0, 0)));
        assert_eq!(tree.parent[2], Some((1, 1)));
    }

    #[test]
    fn tree_edge_count_is_nodes_minus_one() {
        let net = triangle();
        let tree = spanning_tree(&net, 2);
        assert_eq!(tree.tree_edges.len(), net.node_count() - 1);
        assert_eq!(tree.chords.len(), net.edge_count() - net.node_count() + 1);
    }

    #[test]
    fn fundamental_cycle_of_triangle() {
        let net = triangle();
        let tree = spanning_tree(&net, 0);
        let basis = fundamental_cycles(&net, &tree);
        assert_eq!(basis.len(), 1);
        let c = &basis.cycles[0];
        assert_eq!(c.chord, 2);
        // Chord 1→3 then back 3→2 (against edge 1) and 2→1 (against edge 0).
        assert_eq!(c.edges, vec![(2, 1.0), (1, -1.0), (0, -1.0)]);
        assert!(!c.active);
        assert!(basis.edge_disjoint());
    }

    #[test]
    fn cycle_rotation_starts_at_anchor() {
        let net = triangle();
        let basis = fundamental_cycles(&net, &spanning_tree(&net, 0));
        let c = &basis.cycles[0];
        assert_eq!(c.node_sequence(&net), vec![0, 2, 1]);
        // Anchored at node 1 the walk should begin with edge 0 against its
        // direction, then the chord, then edge 1 against its direction.
        assert_eq!(
            c.rotated(&net, 1).unwrap(),
            vec![(0, -1.0), (2, 1.0), (1, -1.0)]
        );
        assert_eq!(c.rotated(&net, 0).unwrap(), c.edges);
        assert!(c.rotated(&net, 99).is_none());
    }

    #[test]
    fn cycle_signs_annihilate_incidence() {
        // A cycle indicator is a circulation: Aᵀ(signs) = 0.
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, 0.0), inj(4, -2.0), inj(5, 0.0)],
            &[
                pipe(1, 2),
                pipe(2, 3),
                pipe(3, 4),
                pipe(4, 5),
                pipe(5, 1),
                pipe(2, 4),
            ],
        )
        .unwrap();
        let tree = spanning_tree(&net, 0);
        let basis = fundamental_cycles(&net, &tree);
        assert_eq!(basis.len(), 2);
        for cycle in &basis.cycles {
            let mut v = DVector::zeros(net.edge_count());
            for &(e, s) in &cycle.edges {
                v[e] = s;
            }
            let div = net.divergence(&v);
            assert!(div.iter().all(|&d| d.abs() < 1e-12), "div = {div:?}");
        }
    }

    #[test]
    fn compressor_in_cycle_marks_it_active() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -1.0)],
            &[comp(1, 2), pipe(2, 3), pipe(1, 3)],
        )
        .unwrap();
        let basis = fundamental_cycles(&net, &spanning_tree(&net, 0));
        assert_eq!(basis.active_cycles(), vec![0]);
    }

    #[test]
    fn overlapping_edges_detected() {
        // Two triangles sharing edge 2↔3: theta graph.
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, 0.0), inj(4, -1.0)],
            &[
                pipe(1, 2),
                pipe(2, 3),
                pipe(1, 3),
                pipe(2, 4),
                pipe(3, 4),
            ],
        )
        .unwrap();
        let basis = fundamental_cycles(&net, &spanning_tree(&net, 0));
        assert_eq!(basis.len(), 2);
        assert!(!basis.edge_disjoint());
        assert!(!basis.overlapping_edges.is_empty());
    }

    #[test]
    fn circulation_exists_iff_cycles_exist() {
        let path = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -1.0)],
            &[pipe(1, 2), pipe(2, 3)],
        )
        .unwrap();
        assert!(detect_circulation(&path).is_none());

        let net = triangle();
        let circ = detect_circulation(&net).unwrap();
        assert!(circ.iter().any(|&v| v != 0.0));
        let div = net.divergence(&circ);
        assert!(div.iter().all(|&d| d.abs() < 1e-12));
    }

    #[test]
    fn monotone_path_on_a_chain() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -1.0)],
            &[pipe(1, 2), pipe(2, 3)],
        )
        .unwrap();
        let pattern = DVector::from_vec(vec![1.0, 1.0]);
        let q = DVector::from_vec(vec![1.0, 0.0, -1.0]);
        let path = monotone_path_decompose(&net, &pattern, &q).unwrap();
        assert_eq!(path.nodes, vec![0, 1, 2]);
        assert_eq!(path.source(), 0);
        assert_eq!(path.sink(), 2);
        assert_eq!(path.indicator.as_slice(), &[1.0, 1.0]);
    }

    #[test]
    fn monotone_path_rides_pattern_directions() {
        // Triangle with pattern sending everything 1→2→3 and 1→3.
        let net = triangle();
        let pattern = DVector::from_vec(vec![0.5, 0.5, 1.5]);
        let q = DVector::from_vec(vec![2.0, 0.0, -2.0]);
        let path = monotone_path_decompose(&net, &pattern, &q).unwrap();
        assert!(q[path.source()] > 0.0);
        assert!(q[path.sink()] < 0.0);
        for e in 0..3 {
            let sign = path.indicator[e];
            if sign != 0.0 {
                assert!(pattern[e] * sign > 0.0);
            }
        }
        // Breadth-first with lowest-edge tie breaks discovers node 3 through
        // the direct edge 1→3.
        assert_eq!(path.nodes, vec![0, 2]);
    }

    #[test]
    fn pattern_divergence_must_match_the_injections() {
        // A pattern pushing 1→2→3 cannot explain demand at node 1.
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -1.0)],
            &[pipe(1, 2), pipe(2, 3)],
        )
        .unwrap();
        let pattern = DVector::from_vec(vec![1.0, 1.0]);
        let q = DVector::from_vec(vec![-1.0, 0.0, 1.0]);
        assert!(matches!(
            monotone_path_decompose(&net, &pattern, &q).unwrap_err(),
            Error::InvalidSpec(_)
        ));
    }

    #[test]
    fn unbalanced_injections_rejected() {
        let net = triangle();
        let pattern = DVector::from_vec(vec![1.0, 1.0, 1.0]);
        let q = DVector::from_vec(vec![1.0, 0.0, 0.5]);
        assert!(matches!(
            monotone_path_decompose(&net, &pattern, &q).unwrap_err(),
            Error::UnbalancedInjections(_)
        ));
    }
}
