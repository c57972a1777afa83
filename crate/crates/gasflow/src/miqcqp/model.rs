//! Assembly of the continuous relaxation solved at every branch-and-bound
//! node.
//!
//! The model is a convex QCQP: a linear objective, linear equalities (mass
//! balance, compressor laws, pinned zero flows), and inequalities that are
//! affine except for one convex quadratic per lossy pipe (the relaxed pipe
//! law). Direction binaries that are still undecided appear as box-bounded
//! continuous variables in [0, 1] coupled through McCormick product rows;
//! decided directions are folded into the rows instead of appearing as
//! variables.

use std::collections::{BTreeMap, BTreeSet};

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::network::{GfSpec, Network};

/// Box bounds required by the relaxation.
#[derive(Debug, Clone)]
pub struct Bounds {
    /// Per-node lower bound on squared pressure (≥ 0).
    pub psi_lo: DVector<f64>,
    /// Per-node upper bound on squared pressure.
    pub psi_hi: DVector<f64>,
    /// Per-edge bound on |φ| (> 0).
    pub phi_abs: DVector<f64>,
}

impl Bounds {
    /// Defaults: ψ ∈ [0, 10·max fixed pressure] everywhere, with flow caps
    /// derived from that ceiling.
    pub fn defaults(network: &Network, spec: &GfSpec) -> Bounds {
        let psi_max = spec
            .fixed_pressure
            .values()
            .fold(f64::MIN, |m, &v| m.max(v));
        Bounds::with_ceiling(network, spec, 10.0 * psi_max)
    }

    /// Bounds under a uniform squared-pressure ceiling. Each pipe's flow cap
    /// is the most its law allows across the pressure range, √(ψ_hi/a), and
    /// compressors inherit the largest pipe cap. Boosted loops can push more
    /// through an edge than the network moves in total, so injection volume
    /// alone is not a safe cap; it only serves as a floor.
    pub fn with_ceiling(network: &Network, spec: &GfSpec, psi_hi: f64) -> Bounds {
        let q = spec.completed_injections(network);
        let supply: f64 = q.iter().filter(|&&v| v > 0.0).sum();
        let demand: f64 = -q.iter().filter(|&&v| v < 0.0).sum::<f64>();
        let floor = (1.5 * supply.max(demand)).max(1.0);
        let mut phi_abs = DVector::from_element(network.edge_count(), floor);
        let mut pipe_cap = floor;
        for edge in network.pipe_edges() {
            phi_abs[edge.id] = (psi_hi / edge.friction().unwrap()).sqrt().max(floor);
            pipe_cap = pipe_cap.max(phi_abs[edge.id]);
        }
        for edge in network.compressor_edges() {
            phi_abs[edge.id] = pipe_cap;
        }
        Bounds {
            psi_lo: DVector::zeros(network.node_count()),
            psi_hi: DVector::from_element(network.node_count(), psi_hi),
            phi_abs,
        }
    }

    pub fn validate(&self, network: &Network) -> Result<()> {
        if self.psi_lo.len() != network.node_count()
            || self.psi_hi.len() != network.node_count()
            || self.phi_abs.len() != network.edge_count()
        {
            return Err(Error::InvalidBounds("bound vector lengths do not match the network".into()));
        }
        for n in 0..network.node_count() {
            let (lo, hi) = (self.psi_lo[n], self.psi_hi[n]);
            if !(lo.is_finite() && hi.is_finite()) || lo < 0.0 || hi <= lo {
                return Err(Error::InvalidBounds(format!(
                    "pressure bounds at node {n} must satisfy 0 <= lo < hi, got [{lo}, {hi}]"
                )));
            }
        }
        for e in 0..network.edge_count() {
            let cap = self.phi_abs[e];
            if !cap.is_finite() || cap <= 0.0 {
                return Err(Error::InvalidBounds(format!(
                    "flow bound on edge {e} must be positive, got {cap}"
                )));
            }
        }
        Ok(())
    }
}

/// Direction decisions already made for lossy pipes, plus edges whose flow is
/// known to be identically zero (from presolve) and is pinned by an equality
/// instead of sign constraints.
#[derive(Debug, Clone, Default)]
pub struct FixedDirections {
    pub x: BTreeMap<usize, bool>,
    pub zero_flow: BTreeSet<usize>,
}

/// Linear equality Σ aᵢ·vᵢ = rhs.
#[derive(Debug, Clone)]
pub struct LinRow {
    pub terms: Vec<(usize, f64)>,
    pub rhs: f64,
}

/// Convex inequality Σ cᵢ·vᵢ² + Σ aᵢ·vᵢ + cst ≤ 0 with cᵢ ≥ 0.
#[derive(Debug, Clone)]
pub struct QuadRow {
    pub quad: Vec<(usize, f64)>,
    pub terms: Vec<(usize, f64)>,
    pub cst: f64,
}

impl QuadRow {
    pub fn value(&self, v: &DVector<f64>) -> f64 {
        let q: f64 = self.quad.iter().map(|&(i, c)| c * v[i] * v[i]).sum();
        let l: f64 = self.terms.iter().map(|&(i, a)| a * v[i]).sum();
        q + l + self.cst
    }
}

/// Continuous relaxation at one node of the search tree.
#[derive(Debug, Clone)]
pub struct Model {
    pub nvars: usize,
    /// Minimize Σ cᵢ·vᵢ.
    pub objective: Vec<(usize, f64)>,
    pub eq: Vec<LinRow>,
    pub ineq: Vec<QuadRow>,
    node_count: usize,
    /// Per edge id: variable index of its flow.
    pub phi_var: Vec<usize>,
    /// Non-pinned node id → variable index of its squared pressure.
    pub psi_var: BTreeMap<usize, usize>,
    /// Pinned node id → fixed squared pressure.
    pub psi_const: BTreeMap<usize, f64>,
    /// Undecided lossy pipe → variable index of its direction relaxation.
    pub x_var: BTreeMap<usize, usize>,
    /// Objective pipe → variable index of its |Δψ| epigraph.
    pub t_var: BTreeMap<usize, usize>,
    /// All lossy pipe ids, ascending.
    pub lossy: Vec<usize>,
}

impl Model {
    pub fn flows(&self, v: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(self.phi_var.len(), self.phi_var.iter().map(|&i| v[i]))
    }

    pub fn pressures(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut psi = DVector::zeros(self.node_count);
        for (&n, &i) in &self.psi_var {
            psi[n] = v[i];
        }
        for (&n, &c) in &self.psi_const {
            psi[n] = c;
        }
        psi
    }

    /// Relaxed direction values for the undecided pipes.
    pub fn x_values(&self, v: &DVector<f64>) -> BTreeMap<usize, f64> {
        self.x_var.iter().map(|(&e, &i)| (e, v[i])).collect()
    }

    pub fn objective_value(&self, v: &DVector<f64>) -> f64 {
        self.objective.iter().map(|&(i, c)| c * v[i]).sum()
    }
}

/// Assemble the relaxation for the given direction decisions.
///
/// `objective_pipes` lists the lossy pipes whose absolute pressure difference
/// enters the objective (those outside compressor-bearing cycles); it is
/// computed once per instance by the caller.
pub fn build_model(
    network: &Network,
    spec: &GfSpec,
    bounds: &Bounds,
    objective_pipes: &[usize],
    fixed: &FixedDirections,
) -> Result<Model> {
    bounds.validate(network)?;
    let mut nvars = 0;
    let mut alloc = || {
        let i = nvars;
        nvars += 1;
        i
    };

    let phi_var: Vec<usize> = network.edges().iter().map(|_| alloc()).collect();
    let mut psi_var = BTreeMap::new();
    let mut psi_const = BTreeMap::new();
    for node in network.nodes() {
        if let Some(&psi) = spec.fixed_pressure.get(&node.id) {
            psi_const.insert(node.id, psi);
        } else {
            psi_var.insert(node.id, alloc());
        }
    }
    let lossy: Vec<usize> = network.pipe_edges().map(|e| e.id).collect();
    let mut x_var = BTreeMap::new();
    let mut z_vars: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for &e in &lossy {
        if !fixed.x.contains_key(&e) {
            z_vars.insert(e, (alloc(), alloc()));
            x_var.insert(e, alloc());
        }
    }
    let mut t_var = BTreeMap::new();
    for &e in objective_pipes {
        t_var.insert(e, alloc());
    }

    let mut eq: Vec<LinRow> = Vec::new();
    let mut ineq: Vec<QuadRow> = Vec::new();
    let eq_scale = |row: &LinRow| {
        row.terms
            .iter()
            .map(|&(_, a)| a.abs())
            .fold(row.rhs.abs().max(1.0), f64::max)
    };
    let mut push_eq = |row: LinRow| -> Result<()> {
        if row.terms.is_empty() {
            if row.rhs.abs() > 1e-9 * eq_scale(&row) {
                return Err(Error::Infeasible(format!(
                    "constant equality violated by {:.3e}",
                    row.rhs
                )));
            }
            return Ok(());
        }
        eq.push(row);
        Ok(())
    };
    // Contribution of ψ_n to a row: a variable term or a constant.
    let psi_term = |n: usize, coef: f64, terms: &mut Vec<(usize, f64)>, cst: &mut f64| {
        if let Some(&i) = psi_var.get(&n) {
            terms.push((i, coef));
        } else {
            *cst += coef * psi_const[&n];
        }
    };
    let affine = |terms: Vec<(usize, f64)>, cst: f64| QuadRow {
        quad: Vec::new(),
        terms,
        cst,
    };

    // Mass balance at every known-injection node.
    for node in network.nodes() {
        let Some(q) = spec.injection(network, node.id) else {
            continue;
        };
        let mut terms = Vec::new();
        for &(eid, _) in network.adjacency(node.id) {
            let e = network.edge(eid);
            let sign = if e.from == node.id { 1.0 } else { -1.0 };
            terms.push((phi_var[eid], sign));
        }
        push_eq(LinRow { terms, rhs: q })?;
    }

    // Pressure boxes on free nodes.
    for (&n, &i) in &psi_var {
        ineq.push(affine(vec![(i, -1.0)], bounds.psi_lo[n]));
        ineq.push(affine(vec![(i, 1.0)], -bounds.psi_hi[n]));
    }

    // Edge laws.
    for e in network.edges() {
        let phi = phi_var[e.id];
        let cap = bounds.phi_abs[e.id];
        let pinned_zero = fixed.zero_flow.contains(&e.id);
        if pinned_zero {
            push_eq(LinRow {
                terms: vec![(phi, 1.0)],
                rhs: 0.0,
            })?;
        }
        match e.kind {
            crate::network::EdgeKind::Compressor { ratio } => {
                // ψ_to − α·ψ_from = 0.
                let mut terms = Vec::new();
                let mut cst = 0.0;
                psi_term(e.to, 1.0, &mut terms, &mut cst);
                psi_term(e.from, -ratio, &mut terms, &mut cst);
                push_eq(LinRow { terms, rhs: -cst })?;
                if !pinned_zero {
                    ineq.push(affine(vec![(phi, -1.0)], 0.0));
                    ineq.push(affine(vec![(phi, 1.0)], -cap));
                }
            }
            crate::network::EdgeKind::Pipe { friction } => {
                let (m, n) = (e.from, e.to);
                // Relaxed pipe law; its shape depends on the direction state.
                match fixed.x.get(&e.id) {
                    Some(true) => {
                        // a·φ² ≤ ψ_m − ψ_n, flow in [0, cap].
                        let mut terms = Vec::new();
                        let mut cst = 0.0;
                        psi_term(n, 1.0, &mut terms, &mut cst);
                        psi_term(m, -1.0, &mut terms, &mut cst);
                        ineq.push(QuadRow {
                            quad: vec![(phi, friction)],
                            terms,
                            cst,
                        });
                        if !pinned_zero {
                            ineq.push(affine(vec![(phi, -1.0)], 0.0));
                            ineq.push(affine(vec![(phi, 1.0)], -cap));
                        }
                    }
                    Some(false) => {
                        // a·φ² ≤ ψ_n − ψ_m, flow in [−cap, 0].
                        let mut terms = Vec::new();
                        let mut cst = 0.0;
                        psi_term(m, 1.0, &mut terms, &mut cst);
                        psi_term(n, -1.0, &mut terms, &mut cst);
                        ineq.push(QuadRow {
                            quad: vec![(phi, friction)],
                            terms,
                            cst,
                        });
                        if !pinned_zero {
                            ineq.push(affine(vec![(phi, 1.0)], 0.0));
                            ineq.push(affine(vec![(phi, -1.0)], -cap));
                        }
                    }
                    None => {
                        let (zm, zn) = z_vars[&e.id];
                        let x = x_var[&e.id];
                        ineq.push(affine(vec![(x, -1.0)], 0.0));
                        ineq.push(affine(vec![(x, 1.0)], -1.0));
                        // McCormick envelope tying z_m to x·ψ_m and z_n to x·ψ_n.
                        for (z, node) in [(zm, m), (zn, n)] {
                            let (lo, hi) = (bounds.psi_lo[node], bounds.psi_hi[node]);
                            ineq.push(affine(vec![(x, lo), (z, -1.0)], 0.0));
                            ineq.push(affine(vec![(z, 1.0), (x, -hi)], 0.0));
                            let mut terms = vec![(x, hi), (z, -1.0)];
                            let mut cst = -hi;
                            psi_term(node, 1.0, &mut terms, &mut cst);
                            ineq.push(affine(terms, cst));
                            let mut terms = vec![(z, 1.0), (x, -lo)];
                            let mut cst = lo;
                            psi_term(node, -1.0, &mut terms, &mut cst);
                            ineq.push(affine(terms, cst));
                        }
                        // a·φ² ≤ 2z_m − 2z_n + ψ_n − ψ_m.
                        let mut terms = vec![(zm, -2.0), (zn, 2.0)];
                        let mut cst = 0.0;
                        psi_term(n, -1.0, &mut terms, &mut cst);
                        psi_term(m, 1.0, &mut terms, &mut cst);
                        ineq.push(QuadRow {
                            quad: vec![(phi, friction)],
                            terms,
                            cst,
                        });
                        // Direction link: −cap·(1−x) ≤ φ ≤ cap·x.
                        ineq.push(affine(vec![(phi, 1.0), (x, -cap)], 0.0));
                        ineq.push(affine(vec![(phi, -1.0), (x, cap)], -cap));
                    }
                }
            }
        }
    }

    // Objective epigraphs: t ≥ |ψ_m − ψ_n| on pipes outside active cycles.
    let t_hi = bounds.psi_hi.max() - bounds.psi_lo.min() + 1.0;
    let mut objective = Vec::new();
    for &eid in objective_pipes {
        let e = network.edge(eid);
        let t = t_var[&eid];
        for (a, b) in [(e.from, e.to), (e.to, e.from)] {
            let mut terms = vec![(t, -1.0)];
            let mut cst = 0.0;
            psi_term(a, 1.0, &mut terms, &mut cst);
            psi_term(b, -1.0, &mut terms, &mut cst);
            ineq.push(affine(terms, cst));
        }
        // Whichever way the flow runs, the drop magnitude is at least a·φ²,
        // so t ≥ a·φ² holds at every 0/1 direction assignment. Adding it
        // while the direction is still undecided keeps the node bound tied
        // to the flows instead of collapsing toward zero.
        if let crate::network::EdgeKind::Pipe { friction } = e.kind {
            ineq.push(QuadRow {
                quad: vec![(phi_var[eid], friction)],
                terms: vec![(t, -1.0)],
                cst: 0.0,
            });
        }
        ineq.push(affine(vec![(t, 1.0)], -t_hi));
        objective.push((t, 1.0));
    }

    Ok(Model {
        nvars,
        objective,
        eq,
        ineq,
        node_count: network.node_count(),
        phi_var,
        psi_var,
        psi_const,
        x_var,
        t_var,
        lossy,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::{build_network, Boundary, RawEdge, RawEdgeKind, RawNode};
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

    fn pipe(from: usize, to: usize) -> RawEdge {
        RawEdge {
            from,
            to,
            kind: RawEdgeKind::Pipe { friction: 1.0 },
        }
    }

    fn two_pipe() -> (Network, GfSpec) {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -2.0)],
            &[pipe(1, 2), pipe(2, 3)],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        (net, spec)
    }

    #[test]
    fn default_bounds_are_sane() {
        let (net, spec) = two_pipe();
        let b = Bounds::defaults(&net, &spec);
        assert!(b.validate(&net).is_ok());
        assert_eq!(b.psi_hi[0], 250.0);
        // √(ψ_hi / a) with a = 1: the most a pipe can carry across the
        // admissible pressure range.
        assert_relative_eq!(b.phi_abs[0], 250.0f64.sqrt(), max_relative = 1e-12);
    }

    #[test]
    fn free_direction_model_has_expected_shape() {
        let (net, spec) = two_pipe();
        let b = Bounds::defaults(&net, &spec);
        let m = build_model(&net, &spec, &b, &[0, 1], &FixedDirections::default()).unwrap();
        // Vars: 2 flows + 2 free pressures + 2×(2 z + 1 x) + 2 t.
        assert_eq!(m.nvars, 2 + 2 + 6 + 2);
        // Equalities: mass balance at the two injection nodes.
        assert_eq!(m.eq.len(), 2);
        // Per free pipe: 2 x-box + 8 McCormick + 1 quadratic + 2 direction;
        // per objective pipe: 2 epigraph + 1 quadratic floor + 1 cap;
        // per free node: 2.
        assert_eq!(m.ineq.len(), 2 * 13 + 2 * 4 + 2 * 2);
        assert_eq!(m.x_var.len(), 2);
        assert_eq!(m.t_var.len(), 2);
        let quads: usize = m.ineq.iter().filter(|r| !r.quad.is_empty()).count();
        assert_eq!(quads, 4);
    }

    #[test]
    fn fixed_directions_eliminate_product_variables() {
        let (net, spec) = two_pipe();
        let b = Bounds::defaults(&net, &spec);
        let fixed = FixedDirections {
            x: BTreeMap::from([(0, true), (1, true)]),
            zero_flow: BTreeSet::new(),
        };
        let m = build_model(&net, &spec, &b, &[0, 1], &fixed).unwrap();
        assert_eq!(m.nvars, 2 + 2 + 2);
        assert!(m.x_var.is_empty());
        // Per fixed pipe: 1 quadratic + 2 sign rows.
        assert_eq!(m.ineq.len(), 2 * 3 + 2 * 4 + 2 * 2);
    }

    #[test]
    fn pinned_zero_flow_becomes_an_equality() {
        let (net, spec) = two_pipe();
        let b = Bounds::defaults(&net, &spec);
        let fixed = FixedDirections {
            x: BTreeMap::from([(0, true), (1, true)]),
            zero_flow: BTreeSet::from([1]),
        };
        let m = build_model(&net, &spec, &b, &[0, 1], &fixed).unwrap();
        // 2 mass rows + 1 pinned flow.
        assert_eq!(m.eq.len(), 3);
        // Pipe 1 lost its two sign rows.
        assert_eq!(m.ineq.len(), 2 * 3 + 2 * 4 + 2 * 2 - 2);
    }

    #[test]
    fn bad_bounds_are_rejected() {
        let (net, _spec) = two_pipe();
        let b = Bounds {
            psi_lo: DVector::from_element(3, 5.0),
            psi_hi: DVector::from_element(3, 5.0),
            phi_abs: DVector::from_element(2, 1.0),
        };
        assert!(matches!(b.validate(&net), Err(Error::InvalidBounds(_))));
        let b = Bounds {
            psi_lo: DVector::zeros(3),
            psi_hi: DVector::from_element(3, 100.0),
            phi_abs: DVector::from_element(2, 0.0),
        };
        assert!(matches!(b.validate(&net), Err(Error::InvalidBounds(_))));
    }

    #[test]
    fn compressor_law_with_both_ends_pinned_must_be_consistent() {
        let net = build_network(
            &[press(1, 20.0), press(2, 30.0)],
            &[RawEdge {
                from: 1,
                to: 2,
                kind: RawEdgeKind::Compressor { ratio: 1.5 },
            }],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let b = Bounds::defaults(&net, &spec);
        assert!(build_model(&net, &spec, &b, &[], &FixedDirections::default()).is_ok());
        let net2 = build_network(
            &[press(1, 20.0), press(2, 31.0)],
            &[RawEdge {
                from: 1,
                to: 2,
                kind: RawEdgeKind::Compressor { ratio: 1.5 },
            }],
        )
        .unwrap();
        let spec2 = GfSpec::from_network(&net2, 1).unwrap();
        let b2 = Bounds::defaults(&net2, &spec2);
        assert!(matches!(
            build_model(&net2, &spec2, &b2, &[], &FixedDirections::default()),
            Err(Error::Infeasible(_))
        ));
    }
}
