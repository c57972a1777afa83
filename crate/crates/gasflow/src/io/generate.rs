//! Seeded random-instance generators.
//!
//! Both generators are pure functions of (base, count, seed): the same call
//! always yields the same instance list, regardless of platform. Draws are
//! consumed in document order, nodes before edges.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::io::Instance;
use crate::network::{Boundary, RawEdgeKind};

/// Perturbed copies of a base instance: every fixed injection except the
/// balancing node gets an additive standard-normal shift, and the balancing
/// node absorbs the sum so each instance stays balanced.
pub fn generate_belgian_style(base: &Instance, count: usize, seed: u64) -> Result<Vec<Instance>> {
    let balancing = base.balancing.ok_or_else(|| {
        Error::InvalidSpec(
            "injection perturbation needs a balancing node to absorb the imbalance".into(),
        )
    })?;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut nodes = base.raw_nodes.clone();
        let mut sum = 0.0;
        for node in nodes.iter_mut() {
            if node.label == balancing {
                continue;
            }
            if let Boundary::Injection(q0) = node.boundary {
                let q = q0 + normal.sample(&mut rng);
                node.boundary = Boundary::Injection(q);
                sum += q;
            }
        }
        for node in nodes.iter_mut() {
            if node.label == balancing {
                node.boundary = Boundary::Injection(-sum);
            }
        }
        let mut inst =
            Instance::assemble(nodes, base.raw_edges.clone(), base.reference, base.balancing)?;
        inst.seed = Some(seed);
        inst.psi_hi = base.psi_hi;
        inst.phi_abs = base.phi_abs;
        out.push(inst);
    }
    Ok(out)
}

/// Scaled copies of a base instance: every fixed injection is scaled by an
/// independent uniform factor in [0.75, 1.25], every compressor ratio is
/// redrawn uniformly from [1, 2], and the reference pressure is pinned to
/// 50 bar (ψ = 2500 bar²). Imbalance lands on the reference node, whose
/// injection is free.
pub fn generate_gaslib_style(base: &Instance, count: usize, seed: u64) -> Result<Vec<Instance>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let mut nodes = base.raw_nodes.clone();
        for node in nodes.iter_mut() {
            match node.boundary {
                Boundary::Injection(q0) => {
                    node.boundary = Boundary::Injection(q0 * rng.random_range(0.75..=1.25));
                }
                Boundary::Pressure(_) if node.label == base.reference => {
                    node.boundary = Boundary::Pressure(2500.0);
                }
                Boundary::Pressure(_) => {}
            }
        }
        let mut edges = base.raw_edges.clone();
        for edge in edges.iter_mut() {
            match &mut edge.kind {
                RawEdgeKind::Compressor { ratio } | RawEdgeKind::Station { ratio, .. } => {
                    *ratio = rng.random_range(1.0..=2.0);
                }
                RawEdgeKind::Pipe { .. } => {}
            }
        }
        let mut inst = Instance::assemble(nodes, edges, base.reference, base.balancing)?;
        inst.seed = Some(seed);
        inst.psi_hi = base.psi_hi;
        inst.phi_abs = base.phi_abs;
        out.push(inst);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::io::{parse_instance, write_instance};

    const BASE: &str = r#"
format = "gfi1"

[[node]]
label = 1
pressure = 2809.0

[[node]]
label = 2
injection = 4.0

[[node]]
label = 3
injection = -2.5

[[node]]
label = 4
injection = -1.5

[[edge]]
kind = "pipe"
from = 1
to = 2
friction = 0.1

[[edge]]
kind = "station"
from = 2
to = 3
ratio = 1.3
friction = 0.2

[[edge]]
kind = "compressor"
from = 2
to = 4
ratio = 1.2

[[edge]]
kind = "pipe"
from = 3
to = 4
friction = 0.15

[spec]
reference = 1
balancing = 4
"#;

    fn base() -> Instance {
        parse_instance(BASE).unwrap()
    }

    fn injections(inst: &Instance) -> Vec<(usize, f64)> {
        inst.raw_nodes
            .iter()
            .filter_map(|n| match n.boundary {
                Boundary::Injection(q) => Some((n.label, q)),
                Boundary::Pressure(_) => None,
            })
            .collect()
    }

    #[test]
    fn perturbed_instances_stay_balanced_and_differ() {
        let batch = generate_belgian_style(&base(), 8, 7).unwrap();
        assert_eq!(batch.len(), 8);
        for inst in &batch {
            let total: f64 = injections(inst).iter().map(|&(_, q)| q).sum();
            assert!(total.abs() < 1e-9, "imbalance {total}");
            assert_eq!(inst.seed, Some(7));
        }
        let a = injections(&batch[0]);
        let b = injections(&batch[1]);
        assert_ne!(a, b);
    }

    #[test]
    fn perturbation_shifts_only_non_balancing_nodes_additively() {
        let b = base();
        let batch = generate_belgian_style(&b, 50, 3).unwrap();
        let q0 = injections(&b);
        for inst in &batch {
            for (&(label, q), &(_, base_q)) in injections(inst).iter().zip(&q0) {
                if label == 4 {
                    continue;
                }
                // Additive unit-normal shifts stay this close to the base
                // with overwhelming probability.
                assert!((q - base_q).abs() < 6.0, "node {label}: {q} vs {base_q}");
            }
        }
    }

    #[test]
    fn same_seed_reproduces_the_batch_exactly() {
        let b = base();
        let x = generate_belgian_style(&b, 5, 123).unwrap();
        let y = generate_belgian_style(&b, 5, 123).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(write_instance(xi), write_instance(yi));
        }
        let z = generate_belgian_style(&b, 5, 124).unwrap();
        assert_ne!(write_instance(&x[0]), write_instance(&z[0]));
    }

    #[test]
    fn missing_balancing_node_is_an_error() {
        let mut b = base();
        b.balancing = None;
        assert!(generate_belgian_style(&b, 1, 0).is_err());
    }

    #[test]
    fn scaled_instances_respect_the_documented_ranges() {
        let b = base();
        let q0 = injections(&b);
        let batch = generate_gaslib_style(&b, 20, 99).unwrap();
        for inst in &batch {
            for (&(label, q), &(_, base_q)) in injections(inst).iter().zip(&q0) {
                let factor = q / base_q;
                assert!(
                    (0.75..=1.25).contains(&factor),
                    "node {label}: factor {factor}"
                );
            }
            for edge in &inst.raw_edges {
                if let RawEdgeKind::Compressor { ratio } | RawEdgeKind::Station { ratio, .. } =
                    edge.kind
                {
                    assert!((1.0..=2.0).contains(&ratio), "ratio {ratio}");
                }
            }
            let psi_ref = inst.spec.reference_pressure();
            assert_eq!(psi_ref, 2500.0);
        }
        let ratios = |i: &Instance| -> Vec<f64> {
            i.raw_edges
                .iter()
                .filter_map(|e| match e.kind {
                    RawEdgeKind::Compressor { ratio } | RawEdgeKind::Station { ratio, .. } => {
                        Some(ratio)
                    }
                    _ => None,
                })
                .collect()
        };
        assert_ne!(ratios(&batch[0]), ratios(&batch[1]));
    }

    #[test]
    fn gaslib_generation_is_deterministic_per_seed() {
        let b = base();
        let x = generate_gaslib_style(&b, 4, 11).unwrap();
        let y = generate_gaslib_style(&b, 4, 11).unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            assert_eq!(write_instance(xi), write_instance(yi));
        }
    }
}
