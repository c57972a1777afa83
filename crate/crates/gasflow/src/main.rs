//! Command line front end.
//!
//! Thin argument handling around the library: `solve` runs one solver on one
//! instance file, `generate` writes randomized copies of a base instance,
//! `bench` runs a solver matrix over a directory, and `check` validates a
//! file and reports its cycle structure.
//!
//! Exit codes: 0 solved or valid, 2 instance proven or detected infeasible,
//! 3 solver gave up (iteration or node budget, numerical failure), 4 bad
//! input (unreadable file, malformed document, unusable options).

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gasflow::energy::{solve_constrained, solve_unconstrained, EnergySolveOptions};
use gasflow::io::{
    generate_belgian_style, generate_gaslib_style, read_instance_file, read_solution_file,
    run_benchmark, write_instance_file, write_solution_file, BenchOptions, BenchSolver, Instance,
};
use gasflow::miqcqp::{certify_conditions, BbOptions};
use gasflow::newton::{solve_nr, NrOptions};
use gasflow::recovery::{solve_miqcqp, RecoveryOptions};
use gasflow::topology::{fundamental_cycles, spanning_tree};
use gasflow::{Error, GfSolution, Network};

#[derive(Parser)]
#[command(
    name = "gasflow",
    version,
    about = "Steady-state gas network flow solvers"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve one instance file and print the steady state.
    Solve {
        /// Instance file (TOML, format "gfi1").
        file: PathBuf,
        /// Which solver to run.
        #[arg(long, value_enum)]
        solver: SolverChoice,
        /// Newton damping factor (nr) or barrier stage multiplier (miqcqp).
        #[arg(long)]
        mu: Option<f64>,
        /// Convergence tolerance: residual norm (nr), gradient norm
        /// (energy-c, energy-u), or relaxation gap (miqcqp).
        #[arg(long)]
        tol: Option<f64>,
        /// Iteration budget (nr, energy-c, energy-u) or node budget (miqcqp).
        #[arg(long)]
        max_iter: Option<usize>,
        /// Solution file whose flows and pressures seed the nr iteration.
        #[arg(long)]
        warm_start: Option<PathBuf>,
        /// Write the solution here (TOML, format "gfs1").
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write randomized copies of a base instance.
    Generate {
        /// Perturbation family.
        #[arg(value_enum)]
        family: Family,
        /// Base instance file.
        #[arg(long)]
        base: PathBuf,
        /// Number of instances to write.
        #[arg(long)]
        count: usize,
        /// Seed for the deterministic generator.
        #[arg(long)]
        seed: u64,
        /// Directory for the generated files (created if missing).
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Run a solver matrix over every instance file in a directory.
    Bench {
        /// Directory scanned (non-recursively) for .gfi files.
        #[arg(long)]
        dir: PathBuf,
        /// Comma-separated solver tokens: a1 (relaxation + recovery),
        /// a2 (cold Newton), a3 (Newton warm-started from a1), energy-c,
        /// energy-u.
        #[arg(long, default_value = "a1,a2,a3")]
        solvers: String,
        /// Per-row CSV report path; a JSON summary lands next to it.
        #[arg(long)]
        report: PathBuf,
        /// Worker threads; 0 means all available cores.
        #[arg(long, default_value_t = 0)]
        jobs: usize,
    },
    /// Validate an instance file and report its cycle structure.
    Check {
        /// Instance file to validate.
        file: PathBuf,
    },
}

#[derive(Copy, Clone, ValueEnum)]
enum SolverChoice {
    /// Energy minimization over cycle flows (pipe-only, one fixed pressure).
    #[value(name = "energy-c")]
    EnergyC,
    /// Energy minimization over nodal pressures (pipe-only).
    #[value(name = "energy-u")]
    EnergyU,
    /// Convex relaxation, branch and bound, and cycle flow recovery.
    Miqcqp,
    /// Damped Newton-Raphson on the full equation stack.
    Nr,
}

#[derive(Copy, Clone, ValueEnum)]
enum Family {
    /// Additive standard-normal injection noise, balancing node absorbing.
    Belgian,
    /// Multiplicative injection scaling and redrawn compression ratios.
    Gaslib,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// Print without panicking when the consumer closes the pipe early.
fn emit(text: &str) {
    let _ = std::io::stdout().write_all(text.as_bytes());
}

/// Map library errors onto the documented process exit codes.
fn exit_code(err: &Error) -> u8 {
    use Error::*;
    match err {
        Infeasible(_) | NegativePressure { .. } | CompressorBackflow { .. }
        | InconsistentPressures(_) => 2,
        NoConvergence { .. } | SubsolverFailure(_) | NoSignChange { .. } | BisectionCap { .. } => 3,
        _ => 4,
    }
}

fn run(cli: Cli) -> gasflow::Result<ExitCode> {
    match cli.command {
        Command::Solve {
            file,
            solver,
            mu,
            tol,
            max_iter,
            warm_start,
            out,
        } => solve(&file, solver, mu, tol, max_iter, warm_start, out),
        Command::Generate {
            family,
            base,
            count,
            seed,
            out_dir,
        } => generate(family, &base, count, seed, &out_dir),
        Command::Bench {
            dir,
            solvers,
            report,
            jobs,
        } => bench(&dir, &solvers, &report, jobs),
        Command::Check { file } => check(&file),
    }
}

#[allow(clippy::too_many_arguments)]
fn solve(
    file: &Path,
    solver: SolverChoice,
    mu: Option<f64>,
    tol: Option<f64>,
    max_iter: Option<usize>,
    warm_start: Option<PathBuf>,
    out: Option<PathBuf>,
) -> gasflow::Result<ExitCode> {
    let instance = read_instance_file(file)?;
    let net = &instance.network;
    let spec = &instance.spec;

    if warm_start.is_some() && !matches!(solver, SolverChoice::Nr) {
        return Err(Error::InvalidSpec(
            "--warm-start only applies to the nr solver".into(),
        ));
    }

    let solution = match solver {
        SolverChoice::EnergyC | SolverChoice::EnergyU => {
            if mu.is_some() {
                eprintln!("note: --mu has no effect on the energy solvers");
            }
            let mut opts = EnergySolveOptions::default();
            if let Some(t) = tol {
                opts.tol = t;
            }
            if let Some(n) = max_iter {
                opts.max_iter = n;
            }
            match solver {
                SolverChoice::EnergyC => solve_constrained(net, spec, &opts)?,
                _ => solve_unconstrained(net, spec, &opts)?,
            }
        }
        SolverChoice::Nr => {
            let mut opts = NrOptions::default();
            if let Some(m) = mu {
                opts.mu = m;
            }
            if let Some(t) = tol {
                opts.tol = t;
            }
            if let Some(n) = max_iter {
                opts.max_iter = n;
            }
            let init = match &warm_start {
                Some(path) => Some(read_solution_file(path, net)?),
                None => None,
            };
            let result = solve_nr(net, spec, init, &opts)?;
            if !result.converged {
                let last = result.residual_history.last().copied().unwrap_or(f64::NAN);
                return Err(Error::NoConvergence {
                    solver: "nr",
                    max_iter: opts.max_iter,
                    residual: last,
                });
            }
            result.solution
        }
        SolverChoice::Miqcqp => {
            let mut bb = BbOptions::default();
            if let Some(m) = mu {
                bb.node_ipm.mu = m;
                bb.final_ipm.mu = m;
            }
            if let Some(t) = tol {
                bb.final_ipm.gap_tol = t;
            }
            if let Some(n) = max_iter {
                bb.node_budget = n;
            }
            let bounds = instance.bounds();
            let (_, recovered) = solve_miqcqp(net, spec, &bounds, &bb, &RecoveryOptions::default())?;
            recovered.solution
        }
    };

    let mut report = solution_report(net, &solution);
    if let Some(path) = out {
        write_solution_file(&path, net, &solution)?;
        let _ = writeln!(report, "wrote {}", path.display());
    }
    emit(&report);
    if !solution.diagnostics.feasible {
        eprintln!("error: solution violates physical bounds (negative squared pressure or compressor backflow)");
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn solution_report(net: &Network, solution: &GfSolution) -> String {
    let d = &solution.diagnostics;
    let mut s = String::new();
    let _ = writeln!(
        s,
        "status=solved solver={} iterations={} seconds={:.3}",
        d.solver, d.iterations, d.seconds
    );
    let _ = writeln!(
        s,
        "residual_norm={:.3e} gap={:.3e} feasible={}",
        d.residual_norm, d.gap, d.feasible
    );
    for node in net.nodes() {
        let psi = solution.pressures[node.id];
        let tag = if node.synthetic { " (junction)" } else { "" };
        let _ = writeln!(
            s,
            "node {:>4}{tag}: pressure {:9.4} bar  injection {:+.6}",
            node.label,
            psi.max(0.0).sqrt(),
            solution.injections[node.id]
        );
    }
    for edge in net.edges() {
        let kind = if edge.is_compressor() { "compressor" } else { "pipe" };
        let _ = writeln!(
            s,
            "edge {:>4} -> {:<4} {kind:<10} flow {:+.6}",
            net.node(edge.from).label,
            net.node(edge.to).label,
            solution.flows[edge.id]
        );
    }
    s
}

fn generate(
    family: Family,
    base: &Path,
    count: usize,
    seed: u64,
    out_dir: &Path,
) -> gasflow::Result<ExitCode> {
    let base_instance = read_instance_file(base)?;
    let instances = match family {
        Family::Belgian => generate_belgian_style(&base_instance, count, seed)?,
        Family::Gaslib => generate_gaslib_style(&base_instance, count, seed)?,
    };
    std::fs::create_dir_all(out_dir)?;
    let stem = base
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("instance");
    for (k, inst) in instances.iter().enumerate() {
        let path = out_dir.join(format!("{stem}-{:04}.gfi", k + 1));
        write_instance_file(&path, inst)?;
    }
    emit(&format!(
        "wrote {} instances to {} (seed {})\n",
        instances.len(),
        out_dir.display(),
        seed
    ));
    Ok(ExitCode::SUCCESS)
}

fn bench(dir: &Path, solvers: &str, report: &Path, jobs: usize) -> gasflow::Result<ExitCode> {
    let mut parsed = Vec::new();
    for token in solvers.split(',').filter(|t| !t.trim().is_empty()) {
        parsed.push(BenchSolver::parse(token.trim())?);
    }
    if parsed.is_empty() {
        return Err(Error::InvalidSpec("no solvers selected".into()));
    }

    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "gfi"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidSpec(format!(
            "no .gfi files in {}",
            dir.display()
        )));
    }
    let mut instances: Vec<(String, Instance)> = Vec::with_capacity(paths.len());
    for path in &paths {
        let name = path
            .file_name()
            .and_then(|s| s.to_str())
            .unwrap_or("instance")
            .to_string();
        instances.push((name, read_instance_file(path)?));
    }

    let opts = BenchOptions {
        solvers: parsed,
        jobs,
        ..BenchOptions::default()
    };
    let result = run_benchmark(&instances, &opts);

    if let Some(parent) = report.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent)?;
        }
    }
    std::fs::write(report, result.to_csv())?;
    let summary_path = report.with_extension("json");
    std::fs::write(&summary_path, result.summary_json())?;

    let mut text = format!(
        "benchmarked {} instances, wrote {} and {}\n",
        instances.len(),
        report.display(),
        summary_path.display()
    );
    for agg in &result.aggregates {
        let gap = agg
            .gap_median
            .map(|g| format!("{g:.3e}"))
            .unwrap_or_else(|| "-".into());
        let _ = writeln!(
            text,
            "{:>8}: solved {}/{} (infeasible {}, no-convergence {}, errors {}, skipped {}), median gap {gap}",
            agg.solver, agg.solved, agg.total, agg.infeasible, agg.no_convergence, agg.errors,
            agg.skipped
        );
    }
    emit(&text);
    Ok(ExitCode::SUCCESS)
}

fn check(file: &Path) -> gasflow::Result<ExitCode> {
    let instance = read_instance_file(file)?;
    let net = &instance.network;
    let spec = &instance.spec;
    let tree = spanning_tree(net, spec.reference);
    let basis = fundamental_cycles(net, &tree);
    let report = certify_conditions(net, spec, &basis);

    let mut text = format!("{}: valid\n", file.display());
    let synthetic = net.nodes().iter().filter(|n| n.synthetic).count();
    let _ = writeln!(
        text,
        "nodes={} ({} junctions) edges={} cycles={}",
        net.node_count(),
        synthetic,
        net.edge_count(),
        basis.len()
    );
    let _ = writeln!(
        text,
        "single fixed pressure: {}",
        yes_no(report.single_fixed_pressure)
    );
    let _ = writeln!(
        text,
        "edge-disjoint cycles:  {}",
        yes_no(report.edge_disjoint_cycles)
    );
    let _ = writeln!(
        text,
        "compressor-free cycles: {}",
        yes_no(report.active_cycles.is_empty())
    );
    if !report.active_cycles.is_empty() {
        let _ = writeln!(text, "active cycles: {:?}", report.active_cycles);
    }
    if !report.overlapping_edges.is_empty() {
        let _ = writeln!(text, "overlapping edges: {:?}", report.overlapping_edges);
    }
    let _ = writeln!(
        text,
        "flows exact outside active cycles: {}",
        yes_no(report.partial_exactness)
    );
    let _ = writeln!(
        text,
        "relaxation exact outright: {}",
        yes_no(report.full_exactness)
    );
    emit(&text);
    Ok(ExitCode::SUCCESS)
}

fn yes_no(b: bool) -> &'static str {
    if b {
        "yes"
    } else {
        "no"
    }
}
