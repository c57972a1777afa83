//! Reading and writing the structured text formats.
//!
//! Instances (`.gfi`) and solutions (`.gfs`) are TOML documents with a
//! versioned `format` header. An instance looks like:
//!
//! ```toml
//! format = "gfi1"
//!
//! [[node]]
//! label = 1
//! pressure = 2500.0        # squared pressure in bar², fixes the node
//!
//! [[node]]
//! label = 2
//! injection = -1.5         # fixed injection, withdrawals negative
//!
//! [[edge]]
//! kind = "pipe"            # or "compressor" (ratio) or "station" (both)
//! from = 1
//! to = 2
//! friction = 0.05
//!
//! [spec]
//! reference = 1            # fixed-pressure node anchoring the solve
//! balancing = 2            # optional: absorbs generator imbalance
//!
//! [bounds]                 # optional uniform overrides
//! psi_hi = 25000.0
//! phi_abs = 700.0
//! ```
//!
//! Each node carries exactly one of `pressure`/`injection`. Stations expand
//! into an ideal compressor followed by a lossy pipe when the network is
//! built; writing an instance back out preserves the station form. Floats are
//! serialized with 17 significant digits, enough to round-trip f64 exactly.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::miqcqp::Bounds;
use crate::network::{
    build_network, Boundary, GfSolution, GfSpec, Network, RawEdge, RawEdgeKind, RawNode,
};

/// A parsed instance: the raw document contents plus the built network.
#[derive(Debug, Clone)]
pub struct Instance {
    pub raw_nodes: Vec<RawNode>,
    pub raw_edges: Vec<RawEdge>,
    /// Label of the reference (fixed-pressure) node.
    pub reference: usize,
    /// Label of the node absorbing imbalance when injections are regenerated.
    pub balancing: Option<usize>,
    /// Uniform squared-pressure ceiling override.
    pub psi_hi: Option<f64>,
    /// Uniform flow cap override.
    pub phi_abs: Option<f64>,
    /// Seed recorded by the generator that produced this instance.
    pub seed: Option<u64>,
    pub network: Network,
    pub spec: GfSpec,
}

impl Instance {
    /// Assemble an instance from raw parts, building and validating the
    /// network along the way.
    pub fn assemble(
        raw_nodes: Vec<RawNode>,
        raw_edges: Vec<RawEdge>,
        reference: usize,
        balancing: Option<usize>,
    ) -> Result<Instance> {
        let network = build_network(&raw_nodes, &raw_edges)?;
        let spec = GfSpec::from_network(&network, reference)?;
        if let Some(label) = balancing {
            let ok = raw_nodes
                .iter()
                .any(|n| n.label == label && matches!(n.boundary, Boundary::Injection(_)));
            if !ok {
                return Err(Error::Schema {
                    path: "spec.balancing".into(),
                    message: format!("node {label} is not a fixed-injection node"),
                });
            }
        }
        Ok(Instance {
            raw_nodes,
            raw_edges,
            reference,
            balancing,
            psi_hi: None,
            phi_abs: None,
            seed: None,
            network,
            spec,
        })
    }

    /// Relaxation bounds for this instance: defaults from the network, with
    /// any file-level overrides applied.
    pub fn bounds(&self) -> Bounds {
        let mut b = match self.psi_hi {
            Some(hi) => Bounds::with_ceiling(&self.network, &self.spec, hi),
            None => Bounds::defaults(&self.network, &self.spec),
        };
        if let Some(cap) = self.phi_abs {
            b.phi_abs.fill(cap);
        }
        b
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceDoc {
    format: String,
    seed: Option<u64>,
    #[serde(default, rename = "node")]
    nodes: Vec<NodeRow>,
    #[serde(default, rename = "edge")]
    edges: Vec<EdgeRow>,
    spec: SpecRow,
    bounds: Option<BoundsRow>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct NodeRow {
    label: usize,
    pressure: Option<f64>,
    injection: Option<f64>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum EdgeRow {
    Pipe { from: usize, to: usize, friction: f64 },
    Compressor { from: usize, to: usize, ratio: f64 },
    Station { from: usize, to: usize, ratio: f64, friction: f64 },
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecRow {
    reference: usize,
    balancing: Option<usize>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BoundsRow {
    psi_hi: Option<f64>,
    phi_abs: Option<f64>,
}

/// Parse an instance document.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let doc: InstanceDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.format != "gfi1" {
        return Err(Error::Schema {
            path: "format".into(),
            message: format!("unsupported instance format {:?}, expected \"gfi1\"", doc.format),
        });
    }
    let mut raw_nodes = Vec::with_capacity(doc.nodes.len());
    for (i, row) in doc.nodes.iter().enumerate() {
        let boundary = match (row.pressure, row.injection) {
            (Some(psi), None) => Boundary::Pressure(psi),
            (None, Some(q)) => Boundary::Injection(q),
            _ => {
                return Err(Error::Schema {
                    path: format!("node[{i}]"),
                    message: format!(
                        "node {} must set exactly one of `pressure` or `injection`",
                        row.label
                    ),
                })
            }
        };
        raw_nodes.push(RawNode {
            label: row.label,
            boundary,
        });
    }
    let raw_edges: Vec<RawEdge> = doc
        .edges
        .iter()
        .map(|row| match *row {
            EdgeRow::Pipe { from, to, friction } => RawEdge {
                from,
                to,
                kind: RawEdgeKind::Pipe { friction },
            },
            EdgeRow::Compressor { from, to, ratio } => RawEdge {
                from,
                to,
                kind: RawEdgeKind::Compressor { ratio },
            },
            EdgeRow::Station {
                from,
                to,
                ratio,
                friction,
            } => RawEdge {
                from,
                to,
                kind: RawEdgeKind::Station { ratio, friction },
            },
        })
        .collect();

    let mut instance = Instance::assemble(
        raw_nodes,
        raw_edges,
        doc.spec.reference,
        doc.spec.balancing,
    )?;
    instance.seed = doc.seed;
    if let Some(b) = doc.bounds {
        instance.psi_hi = b.psi_hi;
        instance.phi_abs = b.phi_abs;
    }
    Ok(instance)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Serialize an instance in the `.gfi` schema.
pub fn write_instance(instance: &Instance) -> String {
    let mut out = String::from("format = \"gfi1\"\n");
    if let Some(seed) = instance.seed {
        let _ = writeln!(out, "seed = {seed}");
    }
    for node in &instance.raw_nodes {
        let _ = writeln!(out, "\n[[node]]\nlabel = {}", node.label);
        match node.boundary {
            Boundary::Pressure(psi) => {
                let _ = writeln!(out, "pressure = {}", fmt_f64(psi));
            }
            Boundary::Injection(q) => {
                let _ = writeln!(out, "injection = {}", fmt_f64(q));
            }
        }
    }
    for edge in &instance.raw_edges {
        let _ = writeln!(out, "\n[[edge]]");
        match edge.kind {
            RawEdgeKind::Pipe { friction } => {
                let _ = writeln!(out, "kind = \"pipe\"\nfrom = {}\nto = {}", edge.from, edge.to);
                let _ = writeln!(out, "friction = {}", fmt_f64(friction));
            }
            RawEdgeKind::Compressor { ratio } => {
                let _ = writeln!(
                    out,
                    "kind = \"compressor\"\nfrom = {}\nto = {}",
                    edge.from, edge.to
                );
                let _ = writeln!(out, "ratio = {}", fmt_f64(ratio));
            }
            RawEdgeKind::Station { ratio, friction } => {
                let _ = writeln!(
                    out,
                    "kind = \"station\"\nfrom = {}\nto = {}",
                    edge.from, edge.to
                );
                let _ = writeln!(out, "ratio = {}", fmt_f64(ratio));
                let _ = writeln!(out, "friction = {}", fmt_f64(friction));
            }
        }
    }
    let _ = writeln!(out, "\n[spec]\nreference = {}", instance.reference);
    if let Some(b) = instance.balancing {
        let _ = writeln!(out, "balancing = {b}");
    }
    if instance.psi_hi.is_some() || instance.phi_abs.is_some() {
        let _ = writeln!(out, "\n[bounds]");
        if let Some(hi) = instance.psi_hi {
            let _ = writeln!(out, "psi_hi = {}", fmt_f64(hi));
        }
        if let Some(cap) = instance.phi_abs {
            let _ = writeln!(out, "phi_abs = {}", fmt_f64(cap));
        }
    }
    out
}

/// Read and parse an instance file, prefixing errors with the path.
pub fn read_instance_file(path: &Path) -> Result<Instance> {
    let text = std::fs::read_to_string(path)?;
    parse_instance(&text).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        Error::Schema { path: field, message } => Error::Schema {
            path: format!("{}: {field}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn write_instance_file(path: &Path, instance: &Instance) -> Result<()> {
    std::fs::write(path, write_instance(instance))?;
    Ok(())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SolutionDoc {
    format: String,
    #[serde(default)]
    #[allow(dead_code)]
    solver: Option<String>,
    #[serde(default)]
    #[allow(dead_code)]
    feasible: Option<bool>,
    #[serde(default)]
    #[allow(dead_code)]
    gap: Option<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    residual_norm: Option<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    iterations: Option<usize>,
    #[serde(default)]
    #[allow(dead_code)]
    seconds: Option<f64>,
    #[serde(default, rename = "node")]
    nodes: Vec<SolutionNodeRow>,
    #[serde(default, rename = "edge")]
    edges: Vec<SolutionEdgeRow>,
}

#[derive(Deserialize)]
struct SolutionNodeRow {
    label: usize,
    pressure: f64,
    #[serde(default)]
    #[allow(dead_code)]
    pressure_bar: Option<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    injection: Option<f64>,
    #[serde(default)]
    #[allow(dead_code)]
    synthetic: Option<bool>,
}

#[derive(Deserialize)]
struct SolutionEdgeRow {
    from: usize,
    to: usize,
    flow: f64,
}

/// Serialize a solution in the `.gfs` schema. Pressures are written both as
/// ψ (bar²) and as √ψ (bar) for readability; node and edge labels refer to
/// the expanded network, so synthetic station nodes appear explicitly.
pub fn write_solution(network: &Network, solution: &GfSolution) -> String {
    let d = &solution.diagnostics;
    let mut out = String::from("format = \"gfs1\"\n");
    let _ = writeln!(out, "solver = {:?}", d.solver);
    let _ = writeln!(out, "feasible = {}", d.feasible);
    let _ = writeln!(out, "gap = {}", fmt_f64(d.gap));
    let _ = writeln!(out, "residual_norm = {}", fmt_f64(d.residual_norm));
    let _ = writeln!(out, "iterations = {}", d.iterations);
    let _ = writeln!(out, "seconds = {}", fmt_f64(d.seconds));
    for node in network.nodes() {
        let psi = solution.pressures[node.id];
        let _ = writeln!(out, "\n[[node]]\nlabel = {}", node.label);
        if node.synthetic {
            let _ = writeln!(out, "synthetic = true");
        }
        let _ = writeln!(out, "pressure = {}", fmt_f64(psi));
        let _ = writeln!(out, "pressure_bar = {}", fmt_f64(psi.max(0.0).sqrt()));
        let _ = writeln!(out, "injection = {}", fmt_f64(solution.injections[node.id]));
    }
    for edge in network.edges() {
        let _ = writeln!(
            out,
            "\n[[edge]]\nfrom = {}\nto = {}",
            network.node(edge.from).label,
            network.node(edge.to).label
        );
        let _ = writeln!(out, "flow = {}", fmt_f64(solution.flows[edge.id]));
    }
    out
}

/// Parse a solution document against a network, returning (flows, pressures).
/// Every node and edge of the expanded network must be present.
pub fn parse_solution(text: &str, network: &Network) -> Result<(DVector<f64>, DVector<f64>)> {
    let doc: SolutionDoc = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
    if doc.format != "gfs1" {
        return Err(Error::Schema {
            path: "format".into(),
            message: format!("unsupported solution format {:?}, expected \"gfs1\"", doc.format),
        });
    }
    let mut pressures = vec![None; network.node_count()];
    for row in &doc.nodes {
        let id = network.node_index(row.label).ok_or_else(|| Error::Schema {
            path: "node".into(),
            message: format!("unknown node label {}", row.label),
        })?;
        pressures[id] = Some(row.pressure);
    }
    let mut flows = vec![None; network.edge_count()];
    for row in &doc.edges {
        let from = network.node_index(row.from);
        let to = network.node_index(row.to);
        let edge = match (from, to) {
            (Some(f), Some(t)) => network
                .edges()
                .iter()
                .find(|e| e.from == f && e.to == t)
                .map(|e| e.id),
            _ => None,
        };
        let Some(e) = edge else {
            return Err(Error::Schema {
                path: "edge".into(),
                message: format!("no edge {} -> {} in the network", row.from, row.to),
            });
        };
        flows[e] = Some(row.flow);
    }
    let pressures: Option<Vec<f64>> = pressures.into_iter().collect();
    let flows: Option<Vec<f64>> = flows.into_iter().collect();
    match (flows, pressures) {
        (Some(f), Some(p)) => Ok((DVector::from_vec(f), DVector::from_vec(p))),
        _ => Err(Error::Schema {
            path: "solution".into(),
            message: "solution must cover every node and edge of the expanded network".into(),
        }),
    }
}

pub fn read_solution_file(
    path: &Path,
    network: &Network,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let text = std::fs::read_to_string(path)?;
    parse_solution(&text, network).map_err(|e| match e {
        Error::Parse(msg) => Error::Parse(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn write_solution_file(path: &Path, network: &Network, solution: &GfSolution) -> Result<()> {
    std::fs::write(path, write_solution(network, solution))?;
    Ok(())
}
