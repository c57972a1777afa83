//! Certify that an instance has no steady state.
//!
//! The direction relaxation only ever widens the feasible set, so when the
//! relaxation itself admits no point, the original problem is infeasible
//! too. This example builds three broken instances: a demand that can only
//! be served backward through a compressor, a demand beyond what the flow
//! caps admit, and pinned pressures that contradict the machine between
//! them, and shows the solver rejecting each with a certificate rather
//! than a numeric failure. A healthy sibling runs last for contrast.
//!
//! Run with: cargo run --example infeasibility_screening

use gasflow::miqcqp::{Bounds, BbOptions};
use gasflow::network::{build_network, Boundary, RawEdge, RawEdgeKind, RawNode};
use gasflow::recovery::{solve_miqcqp, RecoveryOptions};
use gasflow::{Error, GfSpec};

fn press(label: usize, psi: f64) -> RawNode {
    RawNode {
        label,
        boundary: Boundary::Pressure(psi),
    }
}

fn inj(label: usize, q: f64) -> RawNode {
    RawNode {
        label,
        boundary: Boundary::Injection(q),
    }
}

fn pipe(from: usize, to: usize, friction: f64) -> RawEdge {
    RawEdge {
        from,
        to,
        kind: RawEdgeKind::Pipe { friction },
    }
}

fn comp(from: usize, to: usize, ratio: f64) -> RawEdge {
    RawEdge {
        from,
        to,
        kind: RawEdgeKind::Compressor { ratio },
    }
}

fn verdict(name: &str, result: gasflow::Result<()>) {
    match result {
        Ok(()) => println!("{name}: solved"),
        Err(Error::Infeasible(msg)) => println!("{name}: infeasible ({msg})"),
        Err(e) => println!("{name}: solver failure ({e})"),
    }
}

fn main() {
    let bb = BbOptions::default();
    let rec = RecoveryOptions::default();

    // 1. The supply sits downstream of the machine: serving it would drive
    //    the compressor backward, which its one-way constraint forbids.
    let net = build_network(
        &[press(1, 2500.0), inj(2, 0.0), inj(3, 4.0)],
        &[comp(1, 2, 1.4), pipe(2, 3, 0.5)],
    )
    .unwrap();
    let spec = GfSpec::from_network(&net, 1).unwrap();
    let bounds = Bounds::defaults(&net, &spec);
    verdict(
        "backward compressor",
        solve_miqcqp(&net, &spec, &bounds, &bb, &rec).map(|_| ()),
    );

    // 2. The demand exceeds every flow cap, so no mass balance exists inside
    //    the admissible box.
    let net = build_network(
        &[press(1, 2500.0), inj(2, -40.0)],
        &[pipe(1, 2, 1.0)],
    )
    .unwrap();
    let spec = GfSpec::from_network(&net, 1).unwrap();
    let mut bounds = Bounds::defaults(&net, &spec);
    bounds.phi_abs.fill(10.0);
    verdict(
        "demand beyond the caps",
        solve_miqcqp(&net, &spec, &bounds, &bb, &rec).map(|_| ()),
    );

    // 3. Both machine ends pinned, but the outlet pin asks for less than
    //    the boost the machine must deliver.
    let net = build_network(
        &[press(1, 2500.0), press(2, 2000.0)],
        &[comp(1, 2, 1.5)],
    )
    .unwrap();
    let spec = GfSpec::from_network(&net, 1).unwrap();
    let bounds = Bounds::defaults(&net, &spec);
    verdict(
        "pins contradict the machine",
        solve_miqcqp(&net, &spec, &bounds, &bb, &rec).map(|_| ()),
    );

    // 4. The healthy sibling of case 1: supply upstream, demand downstream.
    let net = build_network(
        &[press(1, 2500.0), inj(2, 0.0), inj(3, -4.0)],
        &[comp(1, 2, 1.4), pipe(2, 3, 0.5)],
    )
    .unwrap();
    let spec = GfSpec::from_network(&net, 1).unwrap();
    let bounds = Bounds::defaults(&net, &spec);
    verdict(
        "healthy sibling",
        solve_miqcqp(&net, &spec, &bounds, &bb, &rec).map(|_| ()),
    );
}
