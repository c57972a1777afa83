//! Energy-function solvers for networks without compressors.
//!
//! On pipe-only networks the steady state is the unique minimizer of a
//! convex energy, which yields two solvers:
//!
//! - [`solve_constrained`] minimizes Σ (a/3)|φ|³ over flows satisfying mass
//!   balance, parameterized in cycle space so the constraint is eliminated;
//! - [`solve_unconstrained`] minimizes Σ (2/3)|Δψ|^{3/2}/√a − qᵀψ over free
//!   squared pressures with the fixed-pressure nodes pinned.
//!
//! Both run damped Newton iterations with backtracking line search, so the
//! recorded objective values never increase.

use std::collections::BTreeMap;
use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::network::{Diagnostics, GfSolution, GfSpec, Network};
use crate::physics;
use crate::topology::{fundamental_cycles, spanning_tree, tree_flows, CycleBasis};

/// Tuning knobs shared by both energy solvers.
#[derive(Debug, Clone, Copy)]
pub struct EnergySolveOptions {
    /// Stationarity tolerance on the gradient infinity norm.
    pub tol: f64,
    /// Newton iteration budget.
    pub max_iter: usize,
    /// Curvature guard: |Δψ| is floored at this value inside Hessian weights
    /// so the pressure-space Hessian stays bounded near flat edges.
    pub delta: f64,
}

impl Default for EnergySolveOptions {
    fn default() -> Self {
        EnergySolveOptions {
            tol: 1e-9,
            max_iter: 200,
            delta: 1e-10,
        }
    }
}

/// Objective values recorded per Newton iteration (including the start).
#[derive(Debug, Clone)]
pub(crate) struct EnergyTrace {
    pub objective: Vec<f64>,
}

fn reject_compressors(network: &Network) -> Result<()> {
    if network.has_compressors() {
        return Err(Error::CompressorsUnsupported);
    }
    Ok(())
}

fn finish_solution(
    network: &Network,
    spec: &GfSpec,
    flows: DVector<f64>,
    pressures: DVector<f64>,
    iterations: usize,
    solver: &str,
    started: Instant,
) -> GfSolution {
    let injections = network.divergence(&flows);
    let residual_norm = physics::residual(network, spec, &flows, &pressures).norm();
    let (gap, gap_signed) = physics::exactness_gap(network, &flows, &pressures);
    let feasible = GfSolution::physical(network, &pressures, &flows);
    GfSolution {
        injections,
        flows,
        pressures,
        diagnostics: Diagnostics {
            residual_norm,
            gap,
            gap_signed,
            iterations,
            seconds: started.elapsed().as_secs_f64(),
            solver: solver.to_string(),
            feasible,
        },
    }
}

/// Minimize Σ (a/3)|φ|³ subject to mass balance, over the cycle space of a
/// spanning tree rooted at the reference node.
///
/// Requires a pipe-only network with exactly one fixed-pressure node (its
/// injection is then determined by balance). The gradient in cycle space is
/// the sum of signed pressure drops around each basis cycle, so stationarity
/// is exactly the loop closure law.
pub fn solve_constrained(
    network: &Network,
    spec: &GfSpec,
    opts: &EnergySolveOptions,
) -> Result<GfSolution> {
    solve_constrained_traced(network, spec, opts).map(|(s, _)| s)
}

pub(crate) fn solve_constrained_traced(
    network: &Network,
    spec: &GfSpec,
    opts: &EnergySolveOptions,
) -> Result<(GfSolution, EnergyTrace)> {
    let started = Instant::now();
    reject_compressors(network)?;
    if spec.fixed_pressure.len() != 1 {
        return Err(Error::MultipleFixedPressure(spec.fixed_pressure.len()));
    }
    let injections = spec.completed_injections(network);
    let tree = spanning_tree(network, spec.reference);
    let basis = fundamental_cycles(network, &tree);
    let base_flows = tree_flows(network, &tree, &injections);
    let frictions: Vec<f64> = network
        .edges()
        .iter()
        .map(|e| e.friction().expect("pipe-only network"))
        .collect();

    let cycle_count = basis.len();
    let signs = basis.edge_cycle_signs(network.edge_count());
    let flows_at = |lambda: &DVector<f64>| -> DVector<f64> {
        if cycle_count == 0 {
            base_flows.clone()
        } else {
            &base_flows + &signs * lambda
        }
    };
    let objective = |flows: &DVector<f64>| -> f64 {
        flows
            .iter()
            .zip(&frictions)
            .map(|(&phi, &a)| a / 3.0 * phi.abs().powi(3))
            .sum()
    };

    let mut lambda = DVector::zeros(cycle_count);
    let mut flows = flows_at(&lambda);
    let mut trace = EnergyTrace {
        objective: vec![objective(&flows)],
    };
    let mut iterations = 0;
    if cycle_count > 0 {
        loop {
            // Gradient: signed pressure-drop sum around each cycle.
            let mut grad = DVector::zeros(cycle_count);
            for (c, cycle) in basis.cycles.iter().enumerate() {
                grad[c] = cycle
                    .edges
                    .iter()
                    .map(|&(e, s)| s * physics::pressure_drop(frictions[e], flows[e]))
                    .sum();
            }
            if grad.amax() <= opts.tol {
                break;
            }
            if iterations >= opts.max_iter {
                return Err(Error::NoConvergence {
                    solver: "energy-c".into(),
                    max_iter: opts.max_iter,
                    residual: grad.amax(),
                });
            }
            // Hessian: cycle-weighted Laplacian with edge weights 2a|φ|.
            let mut hess = DMatrix::zeros(cycle_count, cycle_count);
            for e in 0..network.edge_count() {
                let w = 2.0 * frictions[e] * flows[e].abs();
                if w == 0.0 {
                    continue;
                }
                for c in 0..cycle_count {
                    let sc = signs[(e, c)];
                    if sc == 0.0 {
                        continue;
                    }
                    for d in c..cycle_count {
                        let sd = signs[(e, d)];
                        if sd != 0.0 {
                            hess[(c, d)] += w * sc * sd;
                            if d != c {
                                hess[(d, c)] += w * sc * sd;
                            }
                        }
                    }
                }
            }
            let step = levenberg_solve(&hess, &grad)?;
            let obj0 = *trace.objective.last().unwrap();
            let slope: f64 = grad.dot(&step);
            let mut t = 1.0;
            let (next_lambda, next_obj) = loop {
                let cand = &lambda - t * &step;
                let cand_flows = flows_at(&cand);
                let obj = objective(&cand_flows);
                if obj <= obj0 - 1e-4 * t * slope || t < 1e-14 {
                    break (cand, obj);
                }
                t *= 0.5;
            };
            if next_obj > obj0 {
                return Err(Error::NoConvergence {
                    solver: "energy-c".into(),
                    max_iter: opts.max_iter,
                    residual: grad.amax(),
                });
            }
            lambda = next_lambda;
            flows = flows_at(&lambda);
            trace.objective.push(next_obj);
            iterations += 1;
        }
    }
    let prop = physics::propagate_pressures(network, &tree, spec.reference_pressure(), &flows)?;
    let solution = finish_solution(
        network,
        spec,
        flows,
        prop.pressures,
        iterations,
        "energy-c",
        started,
    );
    Ok((solution, trace))
}

/// Minimize F(ψ) = Σ (2/3)|ψ_m − ψ_n|^{3/2}/√a − Σ q_n ψ_n over the squared
/// pressures of non-fixed nodes, with every fixed-pressure node pinned.
///
/// Stationarity of F is mass balance at the free nodes, so the minimizer is
/// the steady state. Works with any number of fixed-pressure nodes; requires
/// a pipe-only network.
pub fn solve_unconstrained(
    network: &Network,
    spec: &GfSpec,
    opts: &EnergySolveOptions,
) -> Result<GfSolution> {
    solve_unconstrained_traced(network, spec, opts).map(|(s, _)| s)
}

pub(crate) fn solve_unconstrained_traced(
    network: &Network,
    spec: &GfSpec,
    opts: &EnergySolveOptions,
) -> Result<(GfSolution, EnergyTrace)> {
    let started = Instant::now();
    reject_compressors(network)?;
    let free: Vec<usize> = (0..network.node_count())
        .filter(|n| !spec.fixed_pressure.contains_key(n))
        .collect();
    let col_of: BTreeMap<usize, usize> = free.iter().enumerate().map(|(k, &n)| (n, k)).collect();
    let injections_known: Vec<f64> = free
        .iter()
        .map(|&n| spec.injection(network, n).expect("free nodes have known injection"))
        .collect();

    // Initial pressures: propagate tree flows of the evenly completed
    // injection vector, then re-pin the fixed nodes.
    let tree = spanning_tree(network, spec.reference);
    let init_flows = tree_flows(network, &tree, &spec.completed_injections(network));
    let prop = physics::propagate_pressures(network, &tree, spec.reference_pressure(), &init_flows)?;
    let mut pressures = prop.pressures;
    for (&n, &psi) in &spec.fixed_pressure {
        pressures[n] = psi;
    }

    let frictions: Vec<f64> = network
        .edges()
        .iter()
        .map(|e| e.friction().expect("pipe-only network"))
        .collect();
    let objective = |psi: &DVector<f64>| -> f64 {
        let edges: f64 = network
            .edges()
            .iter()
            .map(|e| {
                let drop = (psi[e.from] - psi[e.to]).abs();
                2.0 / 3.0 * drop.powf(1.5) / frictions[e.id].sqrt()
            })
            .sum();
        let load: f64 = free
            .iter()
            .zip(&injections_known)
            .map(|(&n, &q)| q * psi[n])
            .sum();
        edges - load
    };

    let mut trace = EnergyTrace {
        objective: vec![objective(&pressures)],
    };
    let mut iterations = 0;
    loop {
        // Gradient at free nodes: net outflow implied by pressures minus q.
        let flows = pipe_flows(network, &frictions, &pressures);
        let div = network.divergence(&flows);
        let mut grad = DVector::zeros(free.len());
        for (k, &n) in free.iter().enumerate() {
            grad[k] = div[n] - injections_known[k];
        }
        if grad.amax() <= opts.tol {
            break;
        }
        if iterations >= opts.max_iter {
            return Err(Error::NoConvergence {
                solver: "energy-u".into(),
                max_iter: opts.max_iter,
                residual: grad.amax(),
            });
        }
        // Hessian: weighted Laplacian restricted to free nodes, edge weight
        // dφ/dΔψ = 1/(2√(a·|Δψ|)), with |Δψ| floored at delta.
        let mut hess = DMatrix::zeros(free.len(), free.len());
        for e in network.edges() {
            let drop = (pressures[e.from] - pressures[e.to]).abs().max(opts.delta);
            let w = 0.5 / (frictions[e.id] * drop).sqrt();
            let cm = col_of.get(&e.from).copied();
            let cn = col_of.get(&e.to).copied();
            if let Some(cm) = cm {
                hess[(cm, cm)] += w;
            }
            if let Some(cn) = cn {
                hess[(cn, cn)] += w;
            }
            if let (Some(cm), Some(cn)) = (cm, cn) {
                hess[(cm, cn)] -= w;
                hess[(cn, cm)] -= w;
            }
        }
        let step = levenberg_solve(&hess, &grad)?;
        let obj0 = *trace.objective.last().unwrap();
        let slope: f64 = grad.dot(&step);
        let mut t = 1.0;
        let (next, next_obj) = loop {
            let mut cand = pressures.clone();
            for (k, &n) in free.iter().enumerate() {
                cand[n] -= t * step[k];
            }
            let obj = objective(&cand);
            if obj <= obj0 - 1e-4 * t * slope || t < 1e-14 {
                break (cand, obj);
            }
            t *= 0.5;
        };
        if next_obj > obj0 {
            return Err(Error::NoConvergence {
                solver: "energy-u".into(),
                max_iter: opts.max_iter,
                residual: grad.amax(),
            });
        }
        pressures = next;
        trace.objective.push(next_obj);
        iterations += 1;
    }
    let flows = pipe_flows(network, &frictions, &pressures);
    let solution = finish_solution(
        network,
        spec,
        flows,
        pressures,
        iterations,
        "energy-u",
        started,
    );
    Ok((solution, trace))
}

fn pipe_flows(network: &Network, frictions: &[f64], pressures: &DVector<f64>) -> DVector<f64> {
    let mut flows = DVector::zeros(network.edge_count());
    for e in network.edges() {
        flows[e.id] = physics::flow_from_drop(frictions[e.id], pressures[e.from] - pressures[e.to]);
    }
    flows
}

/// Solve H d = g for a symmetric positive semidefinite H, adding Levenberg
/// regularization until the factorization succeeds.
fn levenberg_solve(hess: &DMatrix<f64>, grad: &DVector<f64>) -> Result<DVector<f64>> {
    let n = hess.nrows();
    let scale = hess.diagonal().amax().max(1.0);
    let mut nu = 0.0;
    for _ in 0..60 {
        let mut h = hess.clone();
        for i in 0..n {
            h[(i, i)] += nu;
        }
        if let Some(chol) = h.cholesky() {
            return Ok(chol.solve(grad));
        }
        nu = if nu == 0.0 { 1e-12 * scale } else { nu * 10.0 };
    }
    Err(Error::SubsolverFailure(
        "Newton system stayed indefinite under regularization".into(),
    ))
}

/// Convenience wrapper used by the cycle-basis check: true when the basis has
/// no compressor-bearing cycle, in which case energy solvers apply directly.
pub fn energy_solvable(basis: &CycleBasis, network: &Network) -> bool {
    !network.has_compressors() && basis.cycles.iter().all(|c| !c.active)
}
