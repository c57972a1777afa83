//! Batch benchmark harness.
//!
//! Runs a selection of solvers over a list of instances on a bounded worker
//! pool. Per-instance results are deterministic regardless of scheduling, and
//! report rows are ordered by instance id, then by solver, never by
//! completion order. Failures are recorded per row; a bad instance never
//! aborts the batch.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::Serialize;

use crate::energy::{solve_constrained, solve_unconstrained, EnergySolveOptions};
use crate::error::{Error, Result};
use crate::io::Instance;
use crate::miqcqp::BbOptions;
use crate::network::GfSolution;
use crate::newton::{solve_nr, NrOptions};
use crate::recovery::{solve_miqcqp, RecoveryOptions};

/// Solver selection tokens accepted by the harness.
///
/// `a1` is the relaxation pipeline (branch-and-bound plus cycle correction),
/// `a2` is Newton-Raphson from the default initialization, `a3` is
/// Newton-Raphson warm-started from the `a1` solution. The energy solvers can
/// be added for compressor-free batches; they skip instances they do not
/// apply to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BenchSolver {
    A1Relaxation,
    A2ColdNewton,
    A3WarmNewton,
    EnergyConstrained,
    EnergyUnconstrained,
}

impl BenchSolver {
    pub fn parse(token: &str) -> Result<BenchSolver> {
        match token.trim() {
            "a1" => Ok(BenchSolver::A1Relaxation),
            "a2" => Ok(BenchSolver::A2ColdNewton),
            "a3" => Ok(BenchSolver::A3WarmNewton),
            "energy-c" => Ok(BenchSolver::EnergyConstrained),
            "energy-u" => Ok(BenchSolver::EnergyUnconstrained),
            other => Err(Error::InvalidSpec(format!(
                "unknown solver token {other:?}; expected a1, a2, a3, energy-c, or energy-u"
            ))),
        }
    }

    pub fn token(self) -> &'static str {
        match self {
            BenchSolver::A1Relaxation => "a1",
            BenchSolver::A2ColdNewton => "a2",
            BenchSolver::A3WarmNewton => "a3",
            BenchSolver::EnergyConstrained => "energy-c",
            BenchSolver::EnergyUnconstrained => "energy-u",
        }
    }
}

#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub solvers: Vec<BenchSolver>,
    /// Worker threads; 0 means available parallelism.
    pub jobs: usize,
    pub nr: NrOptions,
    pub bb: BbOptions,
    pub recovery: RecoveryOptions,
    pub energy: EnergySolveOptions,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            solvers: vec![
                BenchSolver::A1Relaxation,
                BenchSolver::A2ColdNewton,
                BenchSolver::A3WarmNewton,
            ],
            jobs: 0,
            nr: NrOptions::default(),
            bb: BbOptions::default(),
            recovery: RecoveryOptions::default(),
            energy: EnergySolveOptions::default(),
        }
    }
}

/// One (instance, solver) outcome.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRow {
    pub instance: String,
    pub seed: Option<u64>,
    pub solver: &'static str,
    /// solved | infeasible | no-convergence | error | skipped
    pub status: String,
    pub gap: Option<f64>,
    pub residual_norm: Option<f64>,
    pub iterations: Option<usize>,
    pub seconds: f64,
    pub note: String,
}

/// Per-solver aggregate, recomputable from the rows.
#[derive(Debug, Clone, Serialize)]
pub struct SolverAggregate {
    pub solver: &'static str,
    pub total: usize,
    pub solved: usize,
    pub infeasible: usize,
    pub no_convergence: usize,
    pub errors: usize,
    pub skipped: usize,
    /// Gap quantiles over solved rows: min, median, p90, max.
    pub gap_min: Option<f64>,
    pub gap_median: Option<f64>,
    pub gap_p90: Option<f64>,
    pub gap_max: Option<f64>,
    /// Fraction of solved rows with gap below 1e-3.
    pub gap_below_1e3: Option<f64>,
    pub median_seconds: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<SolverAggregate>,
}

fn csv_field(s: &str) -> String {
    if s.contains(',') || s.contains('"') || s.contains('\n') {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

impl BenchmarkReport {
    /// Delimited per-row report, one line per (instance, solver).
    pub fn to_csv(&self) -> String {
        let mut out =
            String::from("instance,seed,solver,status,gap,residual_norm,iterations,seconds,note\n");
        for r in &self.rows {
            let seed = r.seed.map(|s| s.to_string()).unwrap_or_default();
            let gap = r.gap.map(|g| format!("{g:.6e}")).unwrap_or_default();
            let res = r
                .residual_norm
                .map(|g| format!("{g:.6e}"))
                .unwrap_or_default();
            let iters = r.iterations.map(|i| i.to_string()).unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{:.3},{}\n",
                csv_field(&r.instance),
                seed,
                r.solver,
                r.status,
                gap,
                res,
                iters,
                r.seconds,
                csv_field(&r.note),
            ));
        }
        out
    }

    /// Machine-readable aggregate summary.
    pub fn summary_json(&self) -> String {
        #[derive(Serialize)]
        struct Summary<'a> {
            instances: usize,
            rows: usize,
            solvers: &'a [SolverAggregate],
        }
        let instances = {
            let mut names: Vec<&str> = self.rows.iter().map(|r| r.instance.as_str()).collect();
            names.dedup();
            names.len()
        };
        serde_json::to_string_pretty(&Summary {
            instances,
            rows: self.rows.len(),
            solvers: &self.aggregates,
        })
        .expect("report serialization")
    }
}

fn quantile(sorted: &[f64], p: f64) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let idx = ((sorted.len() - 1) as f64 * p).round() as usize;
    Some(sorted[idx])
}

fn aggregate(rows: &[BenchRow], solver: BenchSolver) -> SolverAggregate {
    let mine: Vec<&BenchRow> = rows.iter().filter(|r| r.solver == solver.token()).collect();
    let count = |status: &str| mine.iter().filter(|r| r.status == status).count();
    let mut gaps: Vec<f64> = mine
        .iter()
        .filter(|r| r.status == "solved")
        .filter_map(|r| r.gap)
        .collect();
    gaps.sort_by(f64::total_cmp);
    let mut times: Vec<f64> = mine
        .iter()
        .filter(|r| r.status != "skipped")
        .map(|r| r.seconds)
        .collect();
    times.sort_by(f64::total_cmp);
    let below = if gaps.is_empty() {
        None
    } else {
        Some(gaps.iter().filter(|&&g| g < 1e-3).count() as f64 / gaps.len() as f64)
    };
    SolverAggregate {
        solver: solver.token(),
        total: mine.len(),
        solved: count("solved"),
        infeasible: count("infeasible"),
        no_convergence: count("no-convergence"),
        errors: count("error"),
        skipped: count("skipped"),
        gap_min: gaps.first().copied(),
        gap_median: quantile(&gaps, 0.5),
        gap_p90: quantile(&gaps, 0.9),
        gap_max: gaps.last().copied(),
        gap_below_1e3: below,
        median_seconds: quantile(&times, 0.5),
    }
}

fn solved_row(
    id: &str,
    seed: Option<u64>,
    solver: BenchSolver,
    solution: &GfSolution,
) -> BenchRow {
    let d = &solution.diagnostics;
    BenchRow {
        instance: id.to_string(),
        seed,
        solver: solver.token(),
        status: if d.feasible { "solved" } else { "infeasible" }.into(),
        gap: Some(d.gap),
        residual_norm: Some(d.residual_norm),
        iterations: Some(d.iterations),
        seconds: d.seconds,
        note: if d.feasible {
            String::new()
        } else {
            "solution violates pressure or compressor-direction sign".into()
        },
    }
}

fn failure_row(id: &str, seed: Option<u64>, solver: BenchSolver, err: &Error) -> BenchRow {
    let status = match err {
        Error::Infeasible(_)
        | Error::NegativePressure { .. }
        | Error::CompressorBackflow { .. }
        | Error::InconsistentPressures(_) => "infeasible",
        Error::NoConvergence { .. } => "no-convergence",
        _ => "error",
    };
    BenchRow {
        instance: id.to_string(),
        seed,
        solver: solver.token(),
        status: status.into(),
        gap: None,
        residual_norm: None,
        iterations: None,
        seconds: 0.0,
        note: err.to_string(),
    }
}

fn skipped_row(id: &str, seed: Option<u64>, solver: BenchSolver, note: &str) -> BenchRow {
    BenchRow {
        instance: id.to_string(),
        seed,
        solver: solver.token(),
        status: "skipped".into(),
        gap: None,
        residual_norm: None,
        iterations: None,
        seconds: 0.0,
        note: note.into(),
    }
}

fn nr_row(
    id: &str,
    seed: Option<u64>,
    solver: BenchSolver,
    result: crate::newton::NrResult,
) -> BenchRow {
    if result.converged {
        solved_row(id, seed, solver, &result.solution)
    } else {
        let d = &result.solution.diagnostics;
        BenchRow {
            instance: id.to_string(),
            seed,
            solver: solver.token(),
            status: "no-convergence".into(),
            gap: None,
            residual_norm: Some(d.residual_norm),
            iterations: Some(d.iterations),
            seconds: d.seconds,
            note: format!("residual {:.3e} after {} iterations", d.residual_norm, d.iterations),
        }
    }
}

fn run_instance(id: &str, inst: &Instance, opts: &BenchOptions) -> Vec<BenchRow> {
    let net = &inst.network;
    let spec = &inst.spec;
    let seed = inst.seed;
    let want = |s: BenchSolver| opts.solvers.contains(&s);

    // a1 also feeds a3's warm start, so compute it once when either is asked.
    let relaxed = if want(BenchSolver::A1Relaxation) || want(BenchSolver::A3WarmNewton) {
        Some(solve_miqcqp(net, spec, &inst.bounds(), &opts.bb, &opts.recovery))
    } else {
        None
    };

    let mut rows = Vec::new();
    for &solver in &opts.solvers {
        let row = match solver {
            BenchSolver::A1Relaxation => match relaxed.as_ref().expect("computed above") {
                Ok((_, recovered)) => solved_row(id, seed, solver, &recovered.solution),
                Err(e) => failure_row(id, seed, solver, e),
            },
            BenchSolver::A2ColdNewton => match solve_nr(net, spec, None, &opts.nr) {
                Ok(result) => nr_row(id, seed, solver, result),
                Err(e) => failure_row(id, seed, solver, &e),
            },
            BenchSolver::A3WarmNewton => match relaxed.as_ref().expect("computed above") {
                Ok((_, recovered)) => {
                    let warm = (
                        recovered.solution.flows.clone(),
                        recovered.solution.pressures.clone(),
                    );
                    match solve_nr(net, spec, Some(warm), &opts.nr) {
                        Ok(result) => nr_row(id, seed, solver, result),
                        Err(e) => failure_row(id, seed, solver, &e),
                    }
                }
                Err(e) => skipped_row(
                    id,
                    seed,
                    solver,
                    &format!("warm start unavailable: {e}"),
                ),
            },
            BenchSolver::EnergyConstrained => {
                if net.has_compressors() {
                    skipped_row(id, seed, solver, "energy minimization needs a pipe-only network")
                } else {
                    match solve_constrained(net, spec, &opts.energy) {
                        Ok(s) => solved_row(id, seed, solver, &s),
                        Err(Error::MultipleFixedPressure(k)) => skipped_row(
                            id,
                            seed,
                            solver,
                            &format!("needs a single fixed pressure, instance has {k}"),
                        ),
                        Err(e) => failure_row(id, seed, solver, &e),
                    }
                }
            }
            BenchSolver::EnergyUnconstrained => {
                if net.has_compressors() {
                    skipped_row(id, seed, solver, "energy minimization needs a pipe-only network")
                } else {
                    match solve_unconstrained(net, spec, &opts.energy) {
                        Ok(s) => solved_row(id, seed, solver, &s),
                        Err(e) => failure_row(id, seed, solver, &e),
                    }
                }
            }
        };
        rows.push(row);
    }
    rows
}

/// Run the selected solvers over every instance and aggregate the outcomes.
pub fn run_benchmark(instances: &[(String, Instance)], opts: &BenchOptions) -> BenchmarkReport {
    let jobs = if opts.jobs == 0 {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    } else {
        opts.jobs
    }
    .min(instances.len().max(1));

    let next = AtomicUsize::new(0);
    let collected: Mutex<Vec<(usize, Vec<BenchRow>)>> = Mutex::new(Vec::new());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= instances.len() {
                    break;
                }
                let (id, inst) = &instances[i];
                let rows = run_instance(id, inst, opts);
                collected.lock().expect("result lock").push((i, rows));
            });
        }
    });

    let mut collected = collected.into_inner().expect("result lock");
    collected.sort_by_key(|&(i, _)| i);
    let rows: Vec<BenchRow> = collected.into_iter().flat_map(|(_, r)| r).collect();
    let aggregates = opts
        .solvers
        .iter()
        .map(|&s| aggregate(&rows, s))
        .collect();
    BenchmarkReport { rows, aggregates }
}
