//! Best-first branch and bound over the pipe direction binaries.
//!
//! Nodes are ordered by (lower bound, creation id) so runs are deterministic.
//! Before the search starts, several reductions cut the binary count: bridge
//! flows are computed exactly from the injections (their direction can be
//! fixed up front, zero flows pinned), station tail pipes inherit their
//! compressor's forward direction, and pipes inside boosted cycles are never
//! branched at all because their pressure drops sit outside the objective
//! and the cycle correction recomputes those flows anyway. The rounded root
//! relaxation is solved as an incumbent candidate ("dive"). Branching picks
//! the most fractional direction variable, ties broken by lowest edge id.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::miqcqp::barrier::{solve_qcqp, IpmOptions, IpmOutcome};
use crate::miqcqp::model::{build_model, Bounds, FixedDirections};
use crate::miqcqp::{certify_conditions, ConditionReport};
use crate::network::{GfSpec, Network};
use crate::topology::{fundamental_cycles, spanning_tree, tree_flows};

#[derive(Debug, Clone)]
pub struct BbOptions {
    /// Abort with a convergence error beyond this many solved nodes.
    pub node_budget: usize,
    /// A direction variable within this of 0/1 counts as decided.
    pub integral_tol: f64,
    /// Nodes whose bound is within this of the incumbent are pruned.
    pub prune_eps: f64,
    /// Interior-point settings for bounding solves.
    pub node_ipm: IpmOptions,
    /// Interior-point settings for incumbent (all-fixed) solves.
    pub final_ipm: IpmOptions,
}

impl Default for BbOptions {
    fn default() -> Self {
        BbOptions {
            node_budget: 100_000,
            integral_tol: 1e-6,
            prune_eps: 1e-9,
            node_ipm: IpmOptions {
                gap_tol: 1e-6,
                ..IpmOptions::default()
            },
            final_ipm: IpmOptions {
                gap_tol: 1e-8,
                ..IpmOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct BbStats {
    /// Relaxations solved, including the root and incumbent resolves.
    pub nodes_solved: usize,
    /// Lossy pipes whose direction was fixed before the search.
    pub presolve_fixed: usize,
    /// Edge ids branched on, in order.
    pub branch_sequence: Vec<usize>,
}

/// Minimizer of the relaxation, before cycle correction.
#[derive(Debug, Clone)]
pub struct RelaxedSolution {
    pub flows: DVector<f64>,
    pub pressures: DVector<f64>,
    pub injections: DVector<f64>,
    /// Final direction bit per lossy pipe.
    pub x: BTreeMap<usize, bool>,
    /// Minimized total |Δψ| over lossy pipes outside active cycles.
    pub objective: f64,
    pub report: ConditionReport,
    pub stats: BbStats,
    pub seconds: f64,
}

struct Node {
    lb: f64,
    id: usize,
    fixed: FixedDirections,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.id == other.id
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    // BinaryHeap is a max-heap; invert so the smallest bound pops first.
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .lb
            .total_cmp(&self.lb)
            .then_with(|| other.id.cmp(&self.id))
    }
}

struct Solved {
    objective: f64,
    lb: f64,
    flows: DVector<f64>,
    pressures: DVector<f64>,
    x_frac: BTreeMap<usize, f64>,
}

#[allow(clippy::too_many_arguments)]
fn solve_node(
    network: &Network,
    spec: &GfSpec,
    bounds: &Bounds,
    objective_pipes: &[usize],
    fixed: &FixedDirections,
    ipm: &IpmOptions,
    stats: &mut BbStats,
) -> Result<Option<Solved>> {
    let model = match build_model(network, spec, bounds, objective_pipes, fixed) {
        Ok(m) => m,
        Err(Error::Infeasible(_)) => return Ok(None),
        Err(e) => return Err(e),
    };
    stats.nodes_solved += 1;
    match solve_qcqp(&model, ipm)? {
        IpmOutcome::Infeasible { .. } => Ok(None),
        IpmOutcome::Optimal { v, objective, gap } => Ok(Some(Solved {
            objective,
            lb: objective - gap,
            flows: model.flows(&v),
            pressures: model.pressures(&v),
            x_frac: model.x_values(&v),
        })),
    }
}

/// Solve the mixed-integer relaxation to global optimality.
///
/// Returns [`Error::Infeasible`] when no direction assignment admits a
/// feasible relaxation (which proves the original instance infeasible), and
/// [`Error::NoConvergence`] when the node budget is exhausted.
pub fn minimize(
    network: &Network,
    spec: &GfSpec,
    bounds: &Bounds,
    opts: &BbOptions,
) -> Result<RelaxedSolution> {
    let started = Instant::now();
    bounds.validate(network)?;
    let tree = spanning_tree(network, spec.reference);
    let basis = fundamental_cycles(network, &tree);
    let report = certify_conditions(network, spec, &basis);
    let in_active_cycle: Vec<bool> = {
        let mut v = vec![false; network.edge_count()];
        for &c in &report.active_cycles {
            for &(e, _) in &basis.cycles[c].edges {
                v[e] = true;
            }
        }
        v
    };
    let objective_pipes: Vec<usize> = network
        .pipe_edges()
        .filter(|e| !in_active_cycle[e.id])
        .map(|e| e.id)
        .collect();
    // Only pipes that contribute to the objective are worth branching on.
    // A pipe inside a boosted cycle has its drop slack unconstrained either
    // way, and the cycle correction rederives its flow from the closure
    // equation, so integrality there buys nothing.
    let branchable: Vec<bool> = {
        let mut v = vec![false; network.edge_count()];
        for &e in &objective_pipes {
            v[e] = true;
        }
        v
    };

    let mut stats = BbStats::default();
    let mut presolve = FixedDirections::default();
    if report.single_fixed_pressure {
        let q = spec.completed_injections(network);
        let flows = tree_flows(network, &tree, &q);
        let tol = 1e-9 * q.amax().max(1.0);
        for e in network.edges() {
            if basis.membership[e.id] > 0 {
                continue;
            }
            let phi = flows[e.id];
            if e.is_compressor() {
                if phi < -tol {
                    return Err(Error::Infeasible(format!(
                        "compressor edge {} must carry backward flow {phi:.6e}",
                        e.id
                    )));
                }
                if phi.abs() <= tol {
                    presolve.zero_flow.insert(e.id);
                }
            } else {
                if phi.abs() <= tol {
                    presolve.zero_flow.insert(e.id);
                    presolve.x.insert(e.id, true);
                } else {
                    presolve.x.insert(e.id, phi > 0.0);
                }
                stats.presolve_fixed += 1;
            }
        }
    }
    // A station tail pipe carries exactly its compressor's flow (the junction
    // between them has no injection), and compressor flow is nonnegative, so
    // the tail's direction is structurally forward.
    for e in network.pipe_edges() {
        if network.node(e.from).synthetic && !presolve.x.contains_key(&e.id) {
            presolve.x.insert(e.id, true);
            stats.presolve_fixed += 1;
        }
    }

    let free_count = objective_pipes
        .iter()
        .filter(|e| !presolve.x.contains_key(e))
        .count();

    // Root relaxation. With nothing left to branch on this is already the
    // answer, solved at the tighter tolerance.
    let root_ipm = if free_count == 0 {
        &opts.final_ipm
    } else {
        &opts.node_ipm
    };
    let Some(root) = solve_node(
        network,
        spec,
        bounds,
        &objective_pipes,
        &presolve,
        root_ipm,
        &mut stats,
    )?
    else {
        return Err(Error::Infeasible(
            "the direction-relaxed problem has no solution".into(),
        ));
    };

    let finish = |sol: Solved, mut x: BTreeMap<usize, bool>, stats: BbStats| {
        // Pipes that were never branched report the direction their final
        // flow actually took.
        for e in network.pipe_edges() {
            x.entry(e.id).or_insert(sol.flows[e.id] >= 0.0);
        }
        let injections = network.divergence(&sol.flows);
        RelaxedSolution {
            flows: sol.flows,
            pressures: sol.pressures,
            injections,
            x,
            objective: sol.objective,
            report: report.clone(),
            stats,
            seconds: started.elapsed().as_secs_f64(),
        }
    };
    let presolved_x = presolve.x.clone();
    if free_count == 0 {
        return Ok(finish(root, presolved_x, stats));
    }

    let round_map = |x_frac: &BTreeMap<usize, f64>| -> BTreeMap<usize, bool> {
        x_frac
            .iter()
            .filter(|(&e, _)| branchable[e])
            .map(|(&e, &x)| (e, x >= 0.5))
            .collect()
    };
    let with_fixed = |extra: &BTreeMap<usize, bool>| -> FixedDirections {
        let mut f = presolve.clone();
        f.x.extend(extra.iter().map(|(&e, &b)| (e, b)));
        f
    };
    let full_x = |extra: &BTreeMap<usize, bool>| -> BTreeMap<usize, bool> {
        let mut m = presolved_x.clone();
        m.extend(extra.iter().map(|(&e, &b)| (e, b)));
        m
    };

    // Dive: fix the rounded root directions and try for an incumbent.
    let mut incumbent: Option<(f64, Solved, BTreeMap<usize, bool>)> = None;
    let dive_bits = round_map(&root.x_frac);
    if let Some(sol) = solve_node(
        network,
        spec,
        bounds,
        &objective_pipes,
        &with_fixed(&dive_bits),
        &opts.final_ipm,
        &mut stats,
    )? {
        incumbent = Some((sol.objective, sol, dive_bits));
    }

    let mut heap: BinaryHeap<Node> = BinaryHeap::new();
    let mut next_id = 0usize;
    let mut push = |heap: &mut BinaryHeap<Node>, lb: f64, fixed: FixedDirections| {
        heap.push(Node {
            lb,
            id: next_id,
            fixed,
        });
        next_id += 1;
    };

    // Seed the search with the root's children.
    let branch_edge = |x_frac: &BTreeMap<usize, f64>, fixed: &FixedDirections| -> Option<usize> {
        x_frac
            .iter()
            .filter(|(&e, _)| branchable[e] && !fixed.x.contains_key(&e))
            .map(|(&e, &x)| (e, (x - 0.5).abs()))
            .min_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
            .map(|(e, _)| e)
    };
    {
        let e = branch_edge(&root.x_frac, &presolve).expect("free directions exist");
        stats.branch_sequence.push(e);
        for bit in [false, true] {
            let mut f = presolve.clone();
            f.x.insert(e, bit);
            push(&mut heap, root.lb, f);
        }
    }

    while let Some(node) = heap.pop() {
        if let Some((best, _, _)) = &incumbent {
            if node.lb >= best - opts.prune_eps {
                break;
            }
        }
        if stats.nodes_solved >= opts.node_budget {
            return Err(Error::NoConvergence {
                solver: "miqcqp",
                max_iter: opts.node_budget,
                residual: incumbent
                    .as_ref()
                    .map(|(best, _, _)| best - node.lb)
                    .unwrap_or(f64::INFINITY),
            });
        }
        let Some(sol) = solve_node(
            network,
            spec,
            bounds,
            &objective_pipes,
            &node.fixed,
            &opts.node_ipm,
            &mut stats,
        )?
        else {
            continue;
        };
        let lb = sol.lb.max(node.lb);
        if let Some((best, _, _)) = &incumbent {
            if lb >= best - opts.prune_eps {
                continue;
            }
        }
        let undecided: Vec<(usize, f64)> = sol
            .x_frac
            .iter()
            .filter(|(&e, _)| branchable[e] && !node.fixed.x.contains_key(&e))
            .map(|(&e, &x)| (e, x))
            .collect();
        let integral = undecided
            .iter()
            .all(|&(_, x)| x.min(1.0 - x).abs() <= opts.integral_tol);
        if integral {
            let mut bits: BTreeMap<usize, bool> = node
                .fixed
                .x
                .iter()
                .filter(|(e, _)| !presolve.x.contains_key(e))
                .map(|(&e, &b)| (e, b))
                .collect();
            bits.extend(undecided.iter().map(|&(e, x)| (e, x >= 0.5)));
            if let Some(exact) = solve_node(
                network,
                spec,
                bounds,
                &objective_pipes,
                &with_fixed(&bits),
                &opts.final_ipm,
                &mut stats,
            )? {
                let better = incumbent
                    .as_ref()
                    .map(|(best, _, _)| exact.objective < *best)
                    .unwrap_or(true);
                if better {
                    incumbent = Some((exact.objective, exact, bits));
                }
                continue;
            }
            // The rounded fix was not solvable; fall through and branch.
        }
        let Some(e) = branch_edge(&sol.x_frac, &node.fixed) else {
            continue;
        };
        stats.branch_sequence.push(e);
        for bit in [false, true] {
            let mut f = node.fixed.clone();
            f.x.insert(e, bit);
            push(&mut heap, lb, f);
        }
    }

    match incumbent {
        Some((_, sol, bits)) => {
            let x = full_x(&bits);
            Ok(finish(sol, x, stats))
        }
        None => Err(Error::Infeasible(
            "no pipe direction assignment is feasible".into(),
        )),
    }
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

    fn pipe(from: usize, to: usize, friction: f64) -> RawEdge {
        RawEdge {
            from,
            to,
            kind: RawEdgeKind::Pipe { friction },
        }
    }

    #[test]
    fn path_network_is_fully_presolved() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -2.0)],
            &[pipe(1, 2, 1.0), pipe(2, 3, 2.0)],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let bounds = Bounds::defaults(&net, &spec);
        let sol = minimize(&net, &spec, &bounds, &BbOptions::default()).unwrap();
        assert_eq!(sol.stats.presolve_fixed, 2);
        assert!(sol.stats.branch_sequence.is_empty());
        assert_eq!(sol.stats.nodes_solved, 1);
        assert_relative_eq!(sol.flows[0], 2.0, epsilon = 1e-4);
        assert_relative_eq!(sol.pressures[2], 13.0, epsilon = 1e-3);
        assert_eq!(sol.x, BTreeMap::from([(0, true), (1, true)]));
        // Recovered injection at the fixed-pressure node balances the demand.
        assert_relative_eq!(sol.injections[0], 2.0, epsilon = 1e-4);
    }

    #[test]
    fn triangle_relaxation_matches_energy_solution() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -3.0)],
            &[pipe(1, 2, 1.0), pipe(2, 3, 1.0), pipe(1, 3, 1.0)],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let bounds = Bounds::defaults(&net, &spec);
        let sol = minimize(&net, &spec, &bounds, &BbOptions::default()).unwrap();
        // Known solution: 3(√2−1) along 1→2→3, remainder direct.
        let g = 3.0 * (2.0f64.sqrt() - 1.0);
        assert_relative_eq!(sol.flows[0], g, epsilon = 1e-3);
        assert_relative_eq!(sol.flows[1], g, epsilon = 1e-3);
        assert_relative_eq!(sol.flows[2], 3.0 - g, epsilon = 1e-3);
        assert_eq!(sol.x, BTreeMap::from([(0, true), (1, true), (2, true)]));
        assert!(sol.report.full_exactness);
    }

    #[test]
    fn flow_reversal_is_found_by_branching() {
        // Demand at node 2 pulls through edge 2→3 declared against the flow.
        let net = build_network(
            &[press(1, 25.0), inj(2, -1.0), inj(3, -1.0)],
            &[pipe(1, 2, 1.0), pipe(3, 2, 1.0), pipe(1, 3, 1.0)],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let bounds = Bounds::defaults(&net, &spec);
        let sol = minimize(&net, &spec, &bounds, &BbOptions::default()).unwrap();
        // Everything flows away from the supply node 1.
        assert!(sol.flows[0] > 0.0);
        assert!(sol.flows[2] > 0.0);
        assert_eq!(sol.x[&0], true);
        assert_eq!(sol.x[&2], true);
        // Mass balance holds at the demand nodes.
        assert_relative_eq!(sol.injections[1], -1.0, epsilon = 1e-4);
        assert_relative_eq!(sol.injections[2], -1.0, epsilon = 1e-4);
    }

    #[test]
    fn infeasible_instance_is_certified() {
        let net = build_network(&[press(1, 25.0), inj(2, -10.0)], &[pipe(1, 2, 1.0)]).unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let mut bounds = Bounds::defaults(&net, &spec);
        bounds.psi_hi = DVector::from_element(2, 30.0);
        assert!(matches!(
            minimize(&net, &spec, &bounds, &BbOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }

    #[test]
    fn compressor_backflow_bridge_is_caught_in_presolve() {
        // The compressor points away from the only demand.
        let net = build_network(
            &[press(1, 25.0), inj(2, 3.0)],
            &[RawEdge {
                from: 2,
                to: 1,
                kind: RawEdgeKind::Compressor { ratio: 1.5 },
            }],
        )
        .unwrap();
        // Supply at node 2 must flow 2→1: fine. Now demand instead:
        let net2 = build_network(
            &[press(1, 25.0), inj(2, -3.0)],
            &[RawEdge {
                from: 2,
                to: 1,
                kind: RawEdgeKind::Compressor { ratio: 1.5 },
            }],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let bounds = Bounds::defaults(&net, &spec);
        assert!(minimize(&net, &spec, &bounds, &BbOptions::default()).is_ok());
        let spec2 = GfSpec::from_network(&net2, 1).unwrap();
        let bounds2 = Bounds::defaults(&net2, &spec2);
        assert!(matches!(
            minimize(&net2, &spec2, &bounds2, &BbOptions::default()),
            Err(Error::Infeasible(_))
        ));
    }
}
