//! Run the three-solver comparison over a generated instance batch.
//!
//! Solver a1 is the relaxation plus cycle recovery, a2 is Newton from the
//! cold start, and a3 is Newton warm-started from a1's state. The harness
//! runs the matrix in parallel, classifies every (instance, solver) pair as
//! solved / infeasible / no-convergence / error / skipped, and aggregates
//! gap quantiles per solver.
//!
//! Run with: cargo run --release --example benchmark_protocol

use std::path::Path;

use gasflow::io::{generate_belgian_style, read_instance_file, run_benchmark, BenchOptions};

fn main() {
    let base_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("data/belgian_analog.gfi");
    let base = read_instance_file(&base_path).unwrap();

    let count = 12;
    let batch = generate_belgian_style(&base, count, 91).unwrap();
    let instances: Vec<(String, gasflow::io::Instance)> = batch
        .into_iter()
        .enumerate()
        .map(|(k, inst)| (format!("belgian-{:03}", k + 1), inst))
        .collect();

    println!("benchmarking {count} perturbed copies of the 20-node network");
    let report = run_benchmark(&instances, &BenchOptions::default());

    println!();
    println!(
        "{:<8} {:>6} {:>10} {:>14} {:>6} {:>12} {:>12}",
        "solver", "solved", "infeasible", "no-convergence", "error", "median gap", "median secs"
    );
    for agg in &report.aggregates {
        println!(
            "{:<8} {:>6} {:>10} {:>14} {:>6} {:>12} {:>12}",
            agg.solver,
            agg.solved,
            agg.infeasible,
            agg.no_convergence,
            agg.errors,
            agg.gap_median
                .map(|g| format!("{g:.3e}"))
                .unwrap_or_else(|| "-".into()),
            agg.median_seconds
                .map(|s| format!("{s:.3}"))
                .unwrap_or_else(|| "-".into()),
        );
    }

    println!();
    println!("per-row detail (first 6 rows of the CSV report):");
    for line in report.to_csv().lines().take(7) {
        println!("  {line}");
    }

    if let Some(a1) = report.aggregates.iter().find(|a| a.solver == "a1") {
        if let Some(share) = a1.gap_below_1e3 {
            println!();
            println!(
                "a1 solved {} instances with gap below 1e-3 on {:.0}% of them",
                a1.solved,
                share * 100.0
            );
        }
    }
}
