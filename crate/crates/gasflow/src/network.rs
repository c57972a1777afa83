//! Network data model, validation, incidence structure, and mass-conservation
//! arithmetic.
//!
//! A gas network is a connected directed graph of junction nodes joined by
//! lossy pipes and ideal compressors. Pressures are handled as *squared*
//! pressures (bar²) throughout. Compressor stations declared in the input are
//! expanded at build time into an ideal compressor followed by a lossy pipe
//! through a synthetic junction node, so that every internal edge obeys
//! exactly one of the two pressure laws.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Boundary condition attached to a node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Boundary {
    /// Fixed squared pressure ψ in bar² (must be positive).
    Pressure(f64),
    /// Fixed injection rate q (positive = supply, negative = demand).
    Injection(f64),
}

/// A junction node of the expanded network.
#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    /// Dense 0-based index, assigned in input order.
    pub id: usize,
    /// User-facing label from the input document. Synthetic nodes get labels
    /// following the largest user label.
    pub label: usize,
    pub boundary: Boundary,
    /// True for junction nodes inserted by compressor-station expansion.
    pub synthetic: bool,
}

/// Physics attached to an edge of the expanded network.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EdgeKind {
    /// Lossy pipe with friction coefficient `a > 0` (bar² per squared flow).
    Pipe { friction: f64 },
    /// Ideal compressor with multiplicative ratio `α > 0`; flow must be ≥ 0.
    Compressor { ratio: f64 },
}

/// A directed edge of the expanded network.
#[derive(Debug, Clone, PartialEq)]
pub struct Edge {
    /// Dense 0-based index: user edges in input order, synthetic pipes
    /// appended in station declaration order.
    pub id: usize,
    /// Tail node index (flow is positive from `from` to `to`).
    pub from: usize,
    /// Head node index.
    pub to: usize,
    pub kind: EdgeKind,
}

impl Edge {
    pub fn is_pipe(&self) -> bool {
        matches!(self.kind, EdgeKind::Pipe { .. })
    }

    pub fn is_compressor(&self) -> bool {
        matches!(self.kind, EdgeKind::Compressor { .. })
    }

    pub fn friction(&self) -> Option<f64> {
        match self.kind {
            EdgeKind::Pipe { friction } => Some(friction),
            EdgeKind::Compressor { .. } => None,
        }
    }

    pub fn ratio(&self) -> Option<f64> {
        match self.kind {
            EdgeKind::Compressor { ratio } => Some(ratio),
            EdgeKind::Pipe { .. } => None,
        }
    }
}

/// Node description as it appears in the input document.
#[derive(Debug, Clone, PartialEq)]
pub struct RawNode {
    pub label: usize,
    pub boundary: Boundary,
}

/// Edge description as it appears in the input document.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RawEdgeKind {
    Pipe { friction: f64 },
    Compressor { ratio: f64 },
    /// Compressor station: expanded to an ideal compressor followed by a
    /// lossy pipe with the given downstream friction.
    Station { ratio: f64, friction: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawEdge {
    pub from: usize,
    pub to: usize,
    pub kind: RawEdgeKind,
}

/// Immutable, validated, compressor-expanded gas network.
#[derive(Debug, Clone)]
pub struct Network {
    nodes: Vec<Node>,
    edges: Vec<Edge>,
    label_to_index: BTreeMap<usize, usize>,
    /// Per node: incident edges as (edge id, neighbour id), sorted by edge id.
    adjacency: Vec<Vec<(usize, usize)>>,
}

impl Network {
    /// Number of nodes N after expansion.
    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Number of edges P after expansion.
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn node(&self, id: usize) -> &Node {
        &self.nodes[id]
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    /// Dense index of the node carrying a user label.
    pub fn node_index(&self, label: usize) -> Option<usize> {
        self.label_to_index.get(&label).copied()
    }

    /// Incident edges of `node` as (edge id, neighbour id), ascending edge id.
    pub fn adjacency(&self, node: usize) -> &[(usize, usize)] {
        &self.adjacency[node]
    }

    pub fn has_compressors(&self) -> bool {
        self.edges.iter().any(Edge::is_compressor)
    }

    pub fn compressor_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.is_compressor())
    }

    pub fn pipe_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.is_pipe())
    }

    /// Dense P×N edge-node incidence matrix: row ℓ has +1 at the tail node
    /// and −1 at the head node of edge ℓ.
    pub fn incidence(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.edge_count(), self.node_count());
        for e in &self.edges {
            a[(e.id, e.from)] = 1.0;
            a[(e.id, e.to)] = -1.0;
        }
        a
    }

    /// Aᵀφ without materializing the incidence matrix: entry n is the net
    /// outflow of node n.
    pub fn divergence(&self, flows: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(self.node_count());
        for e in &self.edges {
            out[e.from] += flows[e.id];
            out[e.to] -= flows[e.id];
        }
        out
    }
}

/// Validate raw inputs, expand compressor stations, and assemble a [`Network`].
///
/// Node and edge indices are dense and follow input order; each station
/// contributes its ideal-compressor edge in the user slot and appends the
/// downstream lossy pipe (and its synthetic junction) after all user entries.
/// Duplicate and antiparallel edge checks run on the expanded graph, so two
/// parallel stations between the same node pair are legal: they expand to
/// distinct paths.
pub fn build_network(raw_nodes: &[RawNode], raw_edges: &[RawEdge]) -> Result<Network> {
    let mut label_to_index = BTreeMap::new();
    let mut nodes = Vec::with_capacity(raw_nodes.len());
    for (idx, rn) in raw_nodes.iter().enumerate() {
        if label_to_index.insert(rn.label, idx).is_some() {
            return Err(Error::DuplicateNodeId(rn.label));
        }
        if let Boundary::Pressure(psi) = rn.boundary {
            if psi <= 0.0 {
                return Err(Error::NonpositivePressure {
                    node: rn.label,
                    value: psi,
                });
            }
        }
        nodes.push(Node {
            id: idx,
            label: rn.label,
            boundary: rn.boundary,
            synthetic: false,
        });
    }

    let mut next_label = raw_nodes.iter().map(|n| n.label).max().unwrap_or(0) + 1;
    let mut edges: Vec<Edge> = Vec::new();
    let mut synthetic_pipes: Vec<(usize, usize, f64)> = Vec::new();

    for (eidx, re) in raw_edges.iter().enumerate() {
        let from = *label_to_index
            .get(&re.from)
            .ok_or(Error::DanglingNode { edge: eidx, node: re.from })?;
        let to = *label_to_index
            .get(&re.to)
            .ok_or(Error::DanglingNode { edge: eidx, node: re.to })?;
        if from == to {
            return Err(Error::InvalidSpec(format!(
                "edge {eidx} is a self-loop at node {}",
                re.from
            )));
        }
        match re.kind {
            RawEdgeKind::Pipe { friction } => {
                if friction <= 0.0 {
                    return Err(Error::NonpositiveFriction { edge: eidx, value: friction });
                }
                edges.push(Edge {
                    id: edges.len(),
                    from,
                    to,
                    kind: EdgeKind::Pipe { friction },
                });
            }
            RawEdgeKind::Compressor { ratio } => {
                if ratio <= 0.0 {
                    return Err(Error::NonpositiveRatio { edge: eidx, value: ratio });
                }
                edges.push(Edge {
                    id: edges.len(),
                    from,
                    to,
                    kind: EdgeKind::Compressor { ratio },
                });
            }
            RawEdgeKind::Station { ratio, friction } => {
                if ratio <= 0.0 {
                    return Err(Error::NonpositiveRatio { edge: eidx, value: ratio });
                }
                if friction <= 0.0 {
                    return Err(Error::NonpositiveFriction { edge: eidx, value: friction });
                }
                let mid = nodes.len();
                nodes.push(Node {
                    id: mid,
                    label: next_label,
                    boundary: Boundary::Injection(0.0),
                    synthetic: true,
                });
                label_to_index.insert(next_label, mid);
                next_label += 1;
                edges.push(Edge {
                    id: edges.len(),
                    from,
                    to: mid,
                    kind: EdgeKind::Compressor { ratio },
                });
                synthetic_pipes.push((mid, to, friction));
            }
        }
    }
    for (from, to, friction) in synthetic_pipes {
        edges.push(Edge {
            id: edges.len(),
            from,
            to,
            kind: EdgeKind::Pipe { friction },
        });
    }

    // Duplicate/antiparallel checks on the expanded graph.
    let mut seen: BTreeMap<(usize, usize), ()> = BTreeMap::new();
    for e in &edges {
        if seen.insert((e.from, e.to), ()).is_some() {
            return Err(Error::DuplicateEdge {
                from: nodes[e.from].label,
                to: nodes[e.to].label,
            });
        }
        if seen.contains_key(&(e.to, e.from)) {
            return Err(Error::AntiparallelEdge {
                m: nodes[e.from].label,
                n: nodes[e.to].label,
            });
        }
    }

    let mut adjacency = vec![Vec::new(); nodes.len()];
    for e in &edges {
        adjacency[e.from].push((e.id, e.to));
        adjacency[e.to].push((e.id, e.from));
    }
    for adj in &mut adjacency {
        adj.sort_unstable();
    }

    // Connectivity (undirected) from node 0.
    if !nodes.is_empty() {
        let mut visited = vec![false; nodes.len()];
        let mut stack = vec![0usize];
        visited[0] = true;
        while let Some(n) = stack.pop() {
            for &(_, other) in &adjacency[n] {
                if !visited[other] {
                    visited[other] = true;
                    stack.push(other);
                }
            }
        }
        if let Some(unreached) = visited.iter().position(|v| !v) {
            return Err(Error::Disconnected(nodes[unreached].label));
        }
    }

    Ok(Network {
        nodes,
        edges,
        label_to_index,
        adjacency,
    })
}

/// Mass-conservation residual Aᵀφ − q.
pub fn mass_residual(
    network: &Network,
    injections: &DVector<f64>,
    flows: &DVector<f64>,
) -> Result<DVector<f64>> {
    if injections.len() != network.node_count() {
        return Err(Error::DimensionMismatch {
            what: "injection vector",
            expected: network.node_count(),
            got: injections.len(),
        });
    }
    if flows.len() != network.edge_count() {
        return Err(Error::DimensionMismatch {
            what: "flow vector",
            expected: network.edge_count(),
            got: flows.len(),
        });
    }
    Ok(network.divergence(flows) - injections)
}

/// True iff the injections sum to zero within 1e−9 relative to ‖q‖₁.
pub fn check_balanced(injections: &DVector<f64>) -> bool {
    let sum: f64 = injections.iter().sum();
    let norm1: f64 = injections.iter().map(|q| q.abs()).sum();
    sum.abs() <= 1e-9 * norm1.max(1.0)
}

/// Boundary conditions of a gas flow instance: the fixed-pressure node set
/// with squared pressures, the fixed-injection set, and the reference node.
#[derive(Debug, Clone, PartialEq)]
pub struct GfSpec {
    /// Node index → fixed squared pressure (bar²). Nonempty.
    pub fixed_pressure: BTreeMap<usize, f64>,
    /// Node index → fixed injection. Synthetic nodes are implicitly zero and
    /// do not appear here.
    pub fixed_injection: BTreeMap<usize, f64>,
    /// Reference node; always a member of `fixed_pressure`.
    pub reference: usize,
}

impl GfSpec {
    /// Validate the partition invariants against a network.
    pub fn new(
        network: &Network,
        fixed_pressure: BTreeMap<usize, f64>,
        fixed_injection: BTreeMap<usize, f64>,
        reference: usize,
    ) -> Result<Self> {
        if fixed_pressure.is_empty() {
            return Err(Error::InvalidSpec("fixed-pressure set is empty".into()));
        }
        if !fixed_pressure.contains_key(&reference) {
            return Err(Error::InvalidSpec(format!(
                "reference node {reference} is not a fixed-pressure node"
            )));
        }
        for (&n, &psi) in &fixed_pressure {
            if n >= network.node_count() {
                return Err(Error::InvalidSpec(format!("unknown node index {n}")));
            }
            if network.node(n).synthetic {
                return Err(Error::InvalidSpec(format!(
                    "synthetic node {n} cannot carry a fixed pressure"
                )));
            }
            if psi <= 0.0 {
                return Err(Error::NonpositivePressure {
                    node: network.node(n).label,
                    value: psi,
                });
            }
            if fixed_injection.contains_key(&n) {
                return Err(Error::InvalidSpec(format!(
                    "node {n} appears in both the fixed-pressure and fixed-injection sets"
                )));
            }
        }
        for &n in fixed_injection.keys() {
            if n >= network.node_count() {
                return Err(Error::InvalidSpec(format!("unknown node index {n}")));
            }
            if network.node(n).synthetic {
                return Err(Error::InvalidSpec(format!(
                    "synthetic node {n} carries its own implicit zero injection"
                )));
            }
        }
        let covered = fixed_pressure.len() + fixed_injection.len();
        let real = network.nodes().iter().filter(|n| !n.synthetic).count();
        if covered != real {
            return Err(Error::InvalidSpec(format!(
                "boundary conditions cover {covered} nodes but the network has {real} non-synthetic nodes"
            )));
        }
        Ok(GfSpec {
            fixed_pressure,
            fixed_injection,
            reference,
        })
    }

    /// Assemble the spec from the boundary conditions stored on the nodes.
    pub fn from_network(network: &Network, reference_label: usize) -> Result<Self> {
        let reference = network
            .node_index(reference_label)
            .ok_or_else(|| Error::InvalidSpec(format!("unknown reference node {reference_label}")))?;
        let mut fixed_pressure = BTreeMap::new();
        let mut fixed_injection = BTreeMap::new();
        for node in network.nodes() {
            if node.synthetic {
                continue;
            }
            match node.boundary {
                Boundary::Pressure(psi) => {
                    fixed_pressure.insert(node.id, psi);
                }
                Boundary::Injection(q) => {
                    fixed_injection.insert(node.id, q);
                }
            }
        }
        Self::new(network, fixed_pressure, fixed_injection, reference)
    }

    /// Squared pressure fixed at the reference node.
    pub fn reference_pressure(&self) -> f64 {
        self.fixed_pressure[&self.reference]
    }

    /// Known injection at a node: fixed-injection value, zero for synthetic
    /// nodes, `None` at fixed-pressure nodes (their injection is an output).
    pub fn injection(&self, network: &Network, node: usize) -> Option<f64> {
        if network.node(node).synthetic {
            return Some(0.0);
        }
        if self.fixed_pressure.contains_key(&node) {
            return None;
        }
        Some(self.fixed_injection.get(&node).copied().unwrap_or(0.0))
    }

    /// Full-length injection vector with the unknown entries at fixed-pressure
    /// nodes filled by an even split of the balancing residual. Exact when
    /// there is a single fixed-pressure node; a heuristic completion otherwise
    /// (used for initialization and default bounds, never for residuals).
    pub fn completed_injections(&self, network: &Network) -> DVector<f64> {
        let mut q = DVector::zeros(network.node_count());
        let mut known_sum = 0.0;
        for node in network.nodes() {
            if let Some(v) = self.injection(network, node.id) {
                q[node.id] = v;
                known_sum += v;
            }
        }
        let share = -known_sum / self.fixed_pressure.len() as f64;
        for &n in self.fixed_pressure.keys() {
            q[n] = share;
        }
        q
    }
}

/// Solver diagnostics attached to a solution.
#[derive(Debug, Clone, PartialEq)]
pub struct Diagnostics {
    /// ‖g(y)‖₂ of the full equality-residual stack.
    pub residual_norm: f64,
    /// Inexactness gap G (clamped at 0).
    pub gap: f64,
    /// Signed gap before clamping, for diagnostics.
    pub gap_signed: f64,
    pub iterations: usize,
    /// Wall-clock seconds, monotonic.
    pub seconds: f64,
    pub solver: String,
    /// ψ ≥ 0 everywhere and φ ≥ 0 on every compressor edge.
    pub feasible: bool,
}

/// A gas flow solution triplet (q, φ, ψ) with diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct GfSolution {
    /// Length-N injections, including recovered values at fixed-pressure nodes.
    pub injections: DVector<f64>,
    /// Length-P edge flows.
    pub flows: DVector<f64>,
    /// Length-N squared pressures.
    pub pressures: DVector<f64>,
    pub diagnostics: Diagnostics,
}

impl GfSolution {
    /// Check ψ ≥ 0 and compressor-flow ≥ 0 with a small scale-relative slack.
    pub fn physical(network: &Network, pressures: &DVector<f64>, flows: &DVector<f64>) -> bool {
        let psi_scale = pressures.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        let phi_scale = flows.iter().fold(1.0f64, |m, v| m.max(v.abs()));
        pressures.iter().all(|&p| p >= -1e-9 * psi_scale)
            && network
                .compressor_edges()
                .all(|e| flows[e.id] >= -1e-9 * phi_scale)
    }
}
