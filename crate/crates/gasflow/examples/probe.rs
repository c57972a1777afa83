//! Temporary probe for the random pipe-network family and infeasible cases.

use gasflow::energy::{solve_constrained, solve_unconstrained, EnergySolveOptions};
use gasflow::miqcqp::{BbOptions, Bounds};
use gasflow::network::{build_network, Boundary, GfSpec, RawEdge, RawEdgeKind, RawNode};
use gasflow::newton::{solve_nr, NrOptions};
use gasflow::recovery::{solve_miqcqp, RecoveryOptions};
use gasflow::Error;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::time::Instant;

fn pipe(from: usize, to: usize, friction: f64) -> RawEdge {
    RawEdge {
        from,
        to,
        kind: RawEdgeKind::Pipe { friction },
    }
}

/// Random connected pipe-only network: a random tree plus up to four chords.
fn random_pipe_network(rng: &mut ChaCha8Rng) -> (Vec<RawNode>, Vec<RawEdge>) {
    let n = rng.random_range(5..=15usize);
    let mut nodes = vec![RawNode {
        label: 1,
        boundary: Boundary::Pressure(rng.random_range(2200.0..3600.0)),
    }];
    for label in 2..=n {
        nodes.push(RawNode {
            label,
            boundary: Boundary::Injection(rng.random_range(-1.0..1.0)),
        });
    }
    let mut edges = Vec::new();
    let mut pairs = Vec::new();
    for child in 2..=n {
        let parent = rng.random_range(1..child);
        let (from, to) = if rng.random_bool(0.5) {
            (parent, child)
        } else {
            (child, parent)
        };
        edges.push(pipe(from, to, rng.random_range(0.02..0.3)));
        pairs.push((from.min(to), from.max(to)));
    }
    let chords = rng.random_range(0..=4usize);
    let mut tries = 0;
    let mut added = 0;
    while added < chords && tries < 60 {
        tries += 1;
        let u = rng.random_range(1..=n);
        let v = rng.random_range(1..=n);
        if u == v {
            continue;
        }
        let key = (u.min(v), u.max(v));
        if pairs.contains(&key) {
            continue;
        }
        pairs.push(key);
        edges.push(pipe(u, v, rng.random_range(0.02..0.3)));
        added += 1;
    }
    (nodes, edges)
}

fn main() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut max_flow_dev = 0.0f64;
    let mut max_psi_dev = 0.0f64;
    let mut failures = 0usize;
    for i in 0..100 {
        let (nodes, edges) = random_pipe_network(&mut rng);
        let network = build_network(&nodes, &edges).unwrap();
        let spec = GfSpec::from_network(&network, 1).unwrap();
        let eopts = EnergySolveOptions::default();
        let con = solve_constrained(&network, &spec, &eopts);
        let unc = solve_unconstrained(&network, &spec, &eopts);
        let bounds = Bounds::defaults(&network, &spec);
        let mut bb = BbOptions::default();
        bb.final_ipm.gap_tol = 1e-12;
        let mq = solve_miqcqp(&network, &spec, &bounds, &bb, &RecoveryOptions::default());
        let (con, unc, (_, rec)) = match (con, unc, mq) {
            (Ok(a), Ok(b), Ok(c)) => (a, b, c),
            (a, b, c) => {
                failures += 1;
                println!(
                    "instance {i}: energy-c {:?} energy-u {:?} miqcqp {:?}",
                    a.err(),
                    b.err(),
                    c.err()
                );
                continue;
            }
        };
        let warm = (rec.solution.flows.clone(), rec.solution.pressures.clone());
        let nr = solve_nr(
            &network,
            &spec,
            Some(warm),
            &NrOptions {
                tol: 1e-9,
                ..NrOptions::default()
            },
        )
        .unwrap();
        if !nr.converged {
            failures += 1;
            println!("instance {i}: warm nr did not converge");
            continue;
        }
        let psi_r = spec.reference_pressure();
        for other in [&unc.flows, &rec.solution.flows, &nr.solution.flows] {
            max_flow_dev = max_flow_dev.max((&con.flows - other).amax());
        }
        for other in [&unc.pressures, &rec.solution.pressures, &nr.solution.pressures] {
            max_psi_dev = max_psi_dev.max((&con.pressures - other).amax() / psi_r);
        }
    }
    println!(
        "agreement: flow dev {max_flow_dev:.3e} psi dev {max_psi_dev:.3e} failures {failures} in {:.1}s",
        start.elapsed().as_secs_f64()
    );

    // Infeasible constructions.
    let mut declared = 0usize;
    for v in 0..10 {
        let (nodes, edges): (Vec<RawNode>, Vec<RawEdge>) = if v % 2 == 0 {
            // Compressor pointing against the only possible flow direction.
            let d = 1.0 + v as f64;
            (
                vec![
                    RawNode {
                        label: 1,
                        boundary: Boundary::Pressure(2500.0),
                    },
                    RawNode {
                        label: 2,
                        boundary: Boundary::Injection(-d),
                    },
                ],
                vec![RawEdge {
                    from: 2,
                    to: 1,
                    kind: RawEdgeKind::Compressor { ratio: 1.2 + 0.05 * v as f64 },
                }],
            )
        } else {
            // Demand whose pipe drop exceeds the source pressure.
            let d = 25.0 + 5.0 * v as f64;
            (
                vec![
                    RawNode {
                        label: 1,
                        boundary: Boundary::Pressure(400.0),
                    },
                    RawNode {
                        label: 2,
                        boundary: Boundary::Injection(-d),
                    },
                ],
                vec![pipe(1, 2, 1.0)],
            )
        };
        let network = build_network(&nodes, &edges).unwrap();
        let spec = GfSpec::from_network(&network, 1).unwrap();
        let bounds = Bounds::defaults(&network, &spec);
        let out = solve_miqcqp(
            &network,
            &spec,
            &bounds,
            &BbOptions::default(),
            &RecoveryOptions::default(),
        );
        match out {
            Err(Error::Infeasible(_)) => declared += 1,
            other => println!("case {v}: expected infeasible, got {other:?}"),
        }
    }
    println!("infeasible declared {declared}/10");
}
