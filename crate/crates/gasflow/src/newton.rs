//! Damped Newton-Raphson on the full steady-state equation stack.
//!
//! The state y stacks all edge flows and all non-reference squared pressures;
//! the residual g(y) stacks mass balance at known-injection nodes, pressure
//! pins, and every edge law (see [`physics::residual_and_jacobian`] for the
//! exact layout). Iterates follow y ← y − μ·J⁻¹g until ‖g‖₂ drops below the
//! tolerance. Unlike the energy and relaxation solvers this works on networks
//! with compressors anywhere, but offers no convergence guarantee; callers
//! must check [`NrResult::converged`].

use std::time::Instant;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::network::{Diagnostics, GfSolution, GfSpec, Network};
use crate::physics::{self, StateLayout};

#[derive(Debug, Clone, Copy)]
pub struct NrOptions {
    /// Step damping μ applied to every Newton update.
    pub mu: f64,
    /// Convergence threshold on ‖g(y)‖₂.
    pub tol: f64,
    pub max_iter: usize,
    /// Diagonal regularization added to a singular Jacobian, scaled by its
    /// largest diagonal entry and escalated tenfold per retry.
    pub rho: f64,
}

impl Default for NrOptions {
    fn default() -> Self {
        NrOptions {
            mu: 1.0,
            tol: 1e-3,
            max_iter: 50,
            rho: 1e-10,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NrResult {
    pub solution: GfSolution,
    pub converged: bool,
    /// ‖g‖₂ before each update plus the final value.
    pub residual_history: Vec<f64>,
}

/// Cold-start state: minimum-norm flows satisfying mass balance for the
/// evenly completed injections, and flat pressures (fixed nodes at their
/// pinned values, everything else at the reference pressure).
pub fn default_init(network: &Network, spec: &GfSpec) -> (DVector<f64>, DVector<f64>) {
    let q = spec.completed_injections(network);
    // Solve Aᵀφ = q in the least-squares sense; the SVD pseudo-inverse gives
    // the minimum-norm flow.
    let at = network.incidence().transpose();
    let svd = at.svd(true, true);
    let flows = svd.solve(&q, 1e-12).unwrap_or_else(|_| DVector::zeros(network.edge_count()));
    let mut pressures =
        DVector::from_element(network.node_count(), spec.reference_pressure());
    for (&n, &psi) in &spec.fixed_pressure {
        pressures[n] = psi;
    }
    (flows, pressures)
}

/// Run damped Newton-Raphson from `init` (or the cold start).
///
/// Returns an error only on dimension mismatches or an irrecoverably singular
/// Jacobian; failure to converge within the budget is reported through
/// [`NrResult::converged`], with the last iterate in the solution.
pub fn solve_nr(
    network: &Network,
    spec: &GfSpec,
    init: Option<(DVector<f64>, DVector<f64>)>,
    opts: &NrOptions,
) -> Result<NrResult> {
    let started = Instant::now();
    let layout = StateLayout::new(network, spec);
    let (flows, pressures) = match init {
        Some((f, p)) => {
            if f.len() != network.edge_count() {
                return Err(Error::DimensionMismatch {
                    what: "warm-start flows",
                    expected: network.edge_count(),
                    got: f.len(),
                });
            }
            if p.len() != network.node_count() {
                return Err(Error::DimensionMismatch {
                    what: "warm-start pressures",
                    expected: network.node_count(),
                    got: p.len(),
                });
            }
            (f, p)
        }
        None => default_init(network, spec),
    };
    let mut y = layout.pack(&flows, &pressures);
    // The reference slot is a constant during iteration.
    let psi_ref = spec.reference_pressure();

    let mut history = Vec::with_capacity(opts.max_iter + 1);
    let mut converged = false;
    let mut iterations = 0;
    let mut initial_norm = f64::NAN;
    loop {
        let (f, p) = layout.unpack(network, psi_ref, &y);
        let (g, jac) = physics::residual_and_jacobian(network, spec, &f, &p);
        let norm = g.norm();
        history.push(norm);
        if initial_norm.is_nan() {
            initial_norm = norm;
        }
        if !norm.is_finite() || norm > 1e8 * initial_norm.max(1.0) {
            break;
        }
        if norm <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iter {
            break;
        }
        let step = solve_regularized(jac, &g, opts.rho)?;
        y -= opts.mu * step;
        iterations += 1;
    }

    let (flows, pressures) = layout.unpack(network, psi_ref, &y);
    let injections = network.divergence(&flows);
    let residual_norm = *history.last().unwrap();
    let (gap, gap_signed) = physics::exactness_gap(network, &flows, &pressures);
    let feasible = converged && GfSolution::physical(network, &pressures, &flows);
    Ok(NrResult {
        solution: GfSolution {
            injections,
            flows,
            pressures,
            diagnostics: Diagnostics {
                residual_norm,
                gap,
                gap_signed,
                iterations,
                seconds: started.elapsed().as_secs_f64(),
                solver: "nr".to_string(),
                feasible,
            },
        },
        converged,
        residual_history: history,
    })
}

fn solve_regularized(
    jac: nalgebra::DMatrix<f64>,
    g: &DVector<f64>,
    rho: f64,
) -> Result<DVector<f64>> {
    let n = jac.nrows();
    let scale = jac.diagonal().amax().max(1.0);
    if let Some(step) = jac.clone().lu().solve(g) {
        if step.iter().all(|v| v.is_finite()) {
            return Ok(step);
        }
    }
    let mut nu = rho * scale;
    for _ in 0..40 {
        let mut j = jac.clone();
        for i in 0..n {
            j[(i, i)] += nu;
        }
        if let Some(step) = j.lu().solve(g) {
            if step.iter().all(|v| v.is_finite()) {
                return Ok(step);
            }
        }
        nu *= 10.0;
    }
    Err(Error::SubsolverFailure(
        "Jacobian stayed singular under diagonal regularization".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::energy::{solve_constrained, EnergySolveOptions};
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
    fn converges_on_a_two_pipe_path() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -2.0)],
            &[pipe(1, 2, 1.0), pipe(2, 3, 2.0)],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let opts = NrOptions {
            tol: 1e-10,
            ..NrOptions::default()
        };
        let res = solve_nr(&net, &spec, None, &opts).unwrap();
        assert!(res.converged);
        assert_relative_eq!(res.solution.flows[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(res.solution.flows[1], 2.0, epsilon = 1e-8);
        assert_relative_eq!(res.solution.pressures[1], 21.0, epsilon = 1e-7);
        assert_relative_eq!(res.solution.pressures[2], 13.0, epsilon = 1e-7);
        assert!(res.solution.diagnostics.feasible);
    }

    #[test]
    fn agrees_with_energy_solver_on_triangle() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -3.0)],
            &[pipe(1, 2, 1.0), pipe(2, 3, 1.0), pipe(1, 3, 1.0)],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let nr = solve_nr(
            &net,
            &spec,
            None,
            &NrOptions {
                tol: 1e-12,
                ..NrOptions::default()
            },
        )
        .unwrap();
        assert!(nr.converged);
        let en = solve_constrained(&net, &spec, &EnergySolveOptions::default()).unwrap();
        for e in 0..net.edge_count() {
            assert_relative_eq!(nr.solution.flows[e], en.flows[e], epsilon = 1e-6);
        }
    }

    #[test]
    fn handles_compressors_and_recovers_laws() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -2.0)],
            &[
                pipe(1, 2, 1.0),
                RawEdge {
                    from: 2,
                    to: 3,
                    kind: RawEdgeKind::Compressor { ratio: 1.5 },
                },
            ],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let res = solve_nr(
            &net,
            &spec,
            None,
            &NrOptions {
                tol: 1e-12,
                ..NrOptions::default()
            },
        )
        .unwrap();
        assert!(res.converged);
        let s = &res.solution;
        assert_relative_eq!(s.flows[0], 2.0, epsilon = 1e-8);
        assert_relative_eq!(s.flows[1], 2.0, epsilon = 1e-8);
        assert_relative_eq!(s.pressures[1], 21.0, epsilon = 1e-7);
        assert_relative_eq!(s.pressures[2], 1.5 * 21.0, epsilon = 1e-7);
        assert!(s.diagnostics.feasible);
    }

    #[test]
    fn warm_start_from_the_solution_stops_immediately() {
        let net = build_network(
            &[press(1, 25.0), inj(2, -2.0)],
            &[pipe(1, 2, 1.0)],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let flows = DVector::from_vec(vec![2.0]);
        let pressures = DVector::from_vec(vec![25.0, 21.0]);
        let res = solve_nr(&net, &spec, Some((flows, pressures)), &NrOptions::default()).unwrap();
        assert!(res.converged);
        assert_eq!(res.solution.diagnostics.iterations, 0);
        assert_eq!(res.residual_history.len(), 1);
    }

    #[test]
    fn iteration_budget_is_respected() {
        let net = build_network(
            &[press(1, 25.0), inj(2, 0.0), inj(3, -3.0)],
            &[pipe(1, 2, 1.0), pipe(2, 3, 1.0), pipe(1, 3, 1.0)],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let res = solve_nr(
            &net,
            &spec,
            None,
            &NrOptions {
                max_iter: 1,
                tol: 1e-14,
                ..NrOptions::default()
            },
        )
        .unwrap();
        assert!(!res.converged);
        assert_eq!(res.solution.diagnostics.iterations, 1);
        assert_eq!(res.residual_history.len(), 2);
    }

    #[test]
    fn mathematical_solution_with_negative_pressure_is_not_feasible() {
        let net = build_network(&[press(1, 25.0), inj(2, -10.0)], &[pipe(1, 2, 1.0)]).unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let res = solve_nr(
            &net,
            &spec,
            None,
            &NrOptions {
                tol: 1e-10,
                max_iter: 200,
                ..NrOptions::default()
            },
        )
        .unwrap();
        assert!(res.converged);
        assert!(res.solution.pressures[1] < 0.0);
        assert!(!res.solution.diagnostics.feasible);
    }

    #[test]
    fn damped_steps_still_converge() {
        let net = build_network(
            &[press(1, 900.0), inj(2, 0.0), inj(3, -4.0)],
            &[pipe(1, 2, 0.4), pipe(2, 3, 0.9), pipe(1, 3, 0.7)],
        )
        .unwrap();
        let spec = GfSpec::from_network(&net, 1).unwrap();
        let res = solve_nr(
            &net,
            &spec,
            None,
            &NrOptions {
                mu: 0.9,
                tol: 1e-9,
                max_iter: 100,
                ..NrOptions::default()
            },
        )
        .unwrap();
        assert!(res.converged);
        assert!(res.solution.diagnostics.residual_norm <= 1e-9);
    }
}
