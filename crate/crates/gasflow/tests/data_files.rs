//! The shipped instance files parse, have the advertised shape, and solve.

use std::path::{Path, PathBuf};

use gasflow::io::read_instance_file;
use gasflow::miqcqp::{certify_conditions, BbOptions};
use gasflow::newton::{solve_nr, NrOptions};
use gasflow::recovery::{solve_miqcqp, RecoveryOptions};
use gasflow::topology::{fundamental_cycles, spanning_tree};
use gasflow::Boundary;

fn data(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join(name)
}

#[test]
fn belgian_analog_has_the_documented_shape() {
    let inst = read_instance_file(&data("belgian_analog.gfi")).unwrap();
    let net = &inst.network;
    // 20 user nodes plus one synthetic node per station.
    assert_eq!(net.node_count(), 23);
    assert_eq!(net.edge_count(), 26);
    let synthetic: Vec<usize> = net
        .nodes()
        .iter()
        .filter(|n| n.synthetic)
        .map(|n| n.label)
        .collect();
    assert_eq!(synthetic, vec![21, 22, 23]);

    let basis = fundamental_cycles(net, &spanning_tree(net, inst.spec.reference));
    assert_eq!(basis.len(), 4);
    // The two trunk loops share edges on purpose.
    assert!(!basis.edge_disjoint());
    assert!(!basis.overlapping_edges.is_empty());
    // Exactly one cycle carries compressors: the parallel-station pair.
    assert_eq!(basis.active_cycles().len(), 1);

    let report = certify_conditions(net, &inst.spec, &basis);
    assert!(report.single_fixed_pressure);
    assert!(!report.edge_disjoint_cycles);
    assert!(!report.partial_exactness);

    // Injection nodes balance exactly, so the file is the zero-noise fixed
    // point of the balancing-node regeneration rule.
    let mut sum = 0.0;
    for node in &inst.raw_nodes {
        if let Boundary::Injection(q) = node.boundary {
            assert!((-19.81..=32.01).contains(&q), "q = {q}");
            sum += q;
        }
    }
    assert!(sum.abs() < 1e-9, "injection sum = {sum}");
}

#[test]
fn gaslib_analog_has_the_documented_shape() {
    let inst = read_instance_file(&data("gaslib40_analog.gfi")).unwrap();
    let net = &inst.network;
    assert_eq!(net.node_count(), 40);
    assert_eq!(net.edge_count(), 45);
    assert_eq!(inst.spec.reference_pressure(), 2500.0);

    let basis = fundamental_cycles(net, &spanning_tree(net, inst.spec.reference));
    assert_eq!(basis.len(), 6);
    assert!(basis.edge_disjoint());
    assert_eq!(basis.active_cycles().len(), 6);

    let report = certify_conditions(net, &inst.spec, &basis);
    assert!(report.single_fixed_pressure);
    assert!(report.edge_disjoint_cycles);
    assert!(report.partial_exactness);
    // Machines sit inside cycles, so full exactness is not certified.
    assert!(!report.full_exactness);
}

#[test]
fn belgian_analog_base_case_solves() {
    let inst = read_instance_file(&data("belgian_analog.gfi")).unwrap();
    let (_, recovered) = solve_miqcqp(
        &inst.network,
        &inst.spec,
        &inst.bounds(),
        &BbOptions::default(),
        &RecoveryOptions::default(),
    )
    .unwrap();
    assert!(recovered.solution.diagnostics.feasible);
    assert!(
        recovered.solution.diagnostics.gap < 1e-3,
        "gap = {:.3e}",
        recovered.solution.diagnostics.gap
    );

    let warm = (
        recovered.solution.flows.clone(),
        recovered.solution.pressures.clone(),
    );
    let nr = solve_nr(&inst.network, &inst.spec, Some(warm), &NrOptions::default()).unwrap();
    assert!(nr.converged, "residual history {:?}", nr.residual_history);
    assert!(nr.solution.diagnostics.feasible);
    assert!(nr.solution.diagnostics.iterations <= 15);
}

#[test]
fn gaslib_analog_base_case_solves() {
    let inst = read_instance_file(&data("gaslib40_analog.gfi")).unwrap();
    let (_, recovered) = solve_miqcqp(
        &inst.network,
        &inst.spec,
        &inst.bounds(),
        &BbOptions::default(),
        &RecoveryOptions::default(),
    )
    .unwrap();
    assert!(recovered.solution.diagnostics.feasible);

    let warm = (
        recovered.solution.flows.clone(),
        recovered.solution.pressures.clone(),
    );
    let nr = solve_nr(&inst.network, &inst.spec, Some(warm), &NrOptions::default()).unwrap();
    assert!(nr.converged, "residual history {:?}", nr.residual_history);
    assert!(nr.solution.diagnostics.feasible);
    assert!(nr.solution.diagnostics.iterations <= 15);
}

#[test]
fn triangle_split_matches_the_closed_form() {
    let inst = read_instance_file(&data("triangle.gfi")).unwrap();
    let nr = solve_nr(
        &inst.network,
        &inst.spec,
        None,
        &NrOptions {
            tol: 1e-10,
            ..NrOptions::default()
        },
    )
    .unwrap();
    assert!(nr.converged);
    // Direct pipe 1->3 is edge 2; the two-hop path is edges 0 and 1.
    let f = 6.0 - 3.0 * 2.0f64.sqrt();
    let g = 3.0 * (2.0f64.sqrt() - 1.0);
    assert!((nr.solution.flows[2] - f).abs() < 1e-3);
    assert!((nr.solution.flows[0] - g).abs() < 1e-3);
    assert!((nr.solution.flows[1] - g).abs() < 1e-3);
}

#[test]
fn two_node_instance_solves_directly() {
    let inst = read_instance_file(&data("two_node.gfi")).unwrap();
    let nr = solve_nr(&inst.network, &inst.spec, None, &NrOptions::default()).unwrap();
    assert!(nr.converged);
    assert!((nr.solution.flows[0] - 1.5).abs() < 1e-6);
    let drop = 0.05 * 1.5 * 1.5;
    assert!((nr.solution.pressures[1] - (2500.0 - drop)).abs() < 1e-6);
}
