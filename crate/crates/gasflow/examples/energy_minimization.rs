//! Solve a looped pipe network by minimizing its flow energy.
//!
//! For compressor-free networks the steady state is the minimizer of
//! Σ (a/3)|φ|³ over mass-balanced flows, and equivalently the minimizer of
//! a pressure-space potential whose stationarity is nodal mass balance.
//! This example runs both formulations on the classic three-node ring and
//! on a meshed grid, and shows they land on the same state.
//!
//! Run with: cargo run --example energy_minimization

use gasflow::energy::{solve_constrained, solve_unconstrained, EnergySolveOptions};
use gasflow::network::{build_network, Boundary, RawEdge, RawEdgeKind, RawNode};
use gasflow::GfSpec;

fn pipe(from: usize, to: usize, friction: f64) -> RawEdge {
    RawEdge {
        from,
        to,
        kind: RawEdgeKind::Pipe { friction },
    }
}

fn main() {
    // A ring: 3 units enter at node 1 and leave at node 3. The direct pipe
    // and the two-hop detour split the flow so both paths lose the same
    // squared pressure: f + g = 3 with f² = 2g².
    let net = build_network(
        &[
            RawNode {
                label: 1,
                boundary: Boundary::Pressure(2500.0),
            },
            RawNode {
                label: 2,
                boundary: Boundary::Injection(0.0),
            },
            RawNode {
                label: 3,
                boundary: Boundary::Injection(-3.0),
            },
        ],
        &[pipe(1, 2, 1.0), pipe(2, 3, 1.0), pipe(1, 3, 1.0)],
    )
    .unwrap();
    let spec = GfSpec::from_network(&net, 1).unwrap();
    let opts = EnergySolveOptions::default();

    let over_flows = solve_constrained(&net, &spec, &opts).unwrap();
    let over_pressures = solve_unconstrained(&net, &spec, &opts).unwrap();

    println!("three-node ring, 3 units from node 1 to node 3");
    println!("  expected split: direct 3(2-sqrt(2)) = {:.6}", 3.0 * (2.0 - 2f64.sqrt()));
    println!("                  detour 3(sqrt(2)-1) = {:.6}", 3.0 * (2f64.sqrt() - 1.0));
    for (name, sol) in [("cycle-space", &over_flows), ("pressure-space", &over_pressures)] {
        println!(
            "  {name:>14}: direct {:.6}, detour {:.6}, iterations {}, residual {:.2e}",
            sol.flows[2],
            sol.flows[0],
            sol.diagnostics.iterations,
            sol.diagnostics.residual_norm
        );
    }

    // A 3x3 meshed grid with one corner feed: four independent loops, all
    // compressor-free, so both solvers still apply.
    let mut nodes = vec![RawNode {
        label: 1,
        boundary: Boundary::Pressure(2500.0),
    }];
    for label in 2..=9 {
        let q = if label == 9 { -4.0 } else { -0.5 };
        nodes.push(RawNode {
            label,
            boundary: Boundary::Injection(q),
        });
    }
    // Grid layout: labels 1..9 laid out row-major, pipes along rows and
    // columns with mildly varying friction.
    let mut edges = Vec::new();
    let mut a = 0.8;
    for row in 0..3 {
        for col in 0..3 {
            let label = 3 * row + col + 1;
            if col + 1 < 3 {
                edges.push(pipe(label, label + 1, a));
                a += 0.07;
            }
            if row + 1 < 3 {
                edges.push(pipe(label, label + 3, a));
                a += 0.05;
            }
        }
    }
    let net = build_network(&nodes, &edges).unwrap();
    let spec = GfSpec::from_network(&net, 1).unwrap();

    let by_flows = solve_constrained(&net, &spec, &opts).unwrap();
    let by_pressures = solve_unconstrained(&net, &spec, &opts).unwrap();

    let max_flow_diff = (&by_flows.flows - &by_pressures.flows).amax();
    let max_psi_diff = (&by_flows.pressures - &by_pressures.pressures).amax();
    println!();
    println!("3x3 meshed grid, corner feed, {} loops", edges.len() - 8);
    println!(
        "  cycle-space solver:    {} iterations, residual {:.2e}",
        by_flows.diagnostics.iterations, by_flows.diagnostics.residual_norm
    );
    println!(
        "  pressure-space solver: {} iterations, residual {:.2e}",
        by_pressures.diagnostics.iterations, by_pressures.diagnostics.residual_norm
    );
    println!("  max flow disagreement:     {max_flow_diff:.3e}");
    println!("  max pressure disagreement: {max_psi_diff:.3e}");
}
