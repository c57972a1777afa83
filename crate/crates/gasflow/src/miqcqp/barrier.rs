//! Log-barrier interior-point solver for the node relaxations.
//!
//! Solves min cᵀv s.t. Ev = d, f_i(v) ≤ 0 where each f_i is affine or a
//! diagonal convex quadratic. Equality feasibility comes from a least-squares
//! projection; strict inequality feasibility comes from a phase-I pass that
//! minimizes the worst constraint value. The central path is followed with
//! an equality-constrained damped Newton method, and a proven infeasibility
//! (phase-I optimum above zero) is reported as an outcome rather than an
//! error so branch-and-bound can prune the node.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::miqcqp::model::{LinRow, Model, QuadRow};

#[derive(Debug, Clone, Copy)]
pub struct IpmOptions {
    /// Target barrier gap m/t; the reported objective is within this of the
    /// true node optimum.
    pub gap_tol: f64,
    /// Initial barrier weight.
    pub t0: f64,
    /// Barrier weight multiplier per stage.
    pub mu: f64,
    /// Inner Newton stop: half squared Newton decrement.
    pub inner_tol: f64,
    pub max_inner: usize,
    /// Interior depth, in row-scaled units, below which phase-I runs; the
    /// point it hands over clears ten times this margin when it can.
    pub feas_margin: f64,
}

impl Default for IpmOptions {
    fn default() -> Self {
        IpmOptions {
            gap_tol: 1e-8,
            t0: 1.0,
            mu: 10.0,
            inner_tol: 1e-10,
            max_inner: 80,
            feas_margin: 1e-4,
        }
    }
}

#[derive(Debug, Clone)]
pub enum IpmOutcome {
    Optimal {
        v: DVector<f64>,
        objective: f64,
        /// Upper bound on the distance to the true relaxation optimum.
        gap: f64,
    },
    /// The constraint set is empty; `slack` is the best achievable value of
    /// the worst constraint (positive).
    Infeasible { slack: f64 },
}

struct Program {
    nvars: usize,
    objective: Vec<(usize, f64)>,
    eq: DMatrix<f64>,
    ineq: Vec<QuadRow>,
}

impl Program {
    fn objective_value(&self, v: &DVector<f64>) -> f64 {
        self.objective.iter().map(|&(i, c)| c * v[i]).sum()
    }
}

/// Row-reduce the equality system to full row rank.
///
/// Returns `None` when the equalities are inconsistent; otherwise the reduced
/// (E, d) with independent rows.
fn reduce_equalities(rows: &[LinRow], nvars: usize) -> Option<(DMatrix<f64>, DVector<f64>)> {
    let me = rows.len();
    let mut aug = DMatrix::zeros(me, nvars + 1);
    let mut scale = 1.0f64;
    for (r, row) in rows.iter().enumerate() {
        for &(i, a) in &row.terms {
            aug[(r, i)] += a;
            scale = scale.max(a.abs());
        }
        aug[(r, nvars)] = row.rhs;
        scale = scale.max(row.rhs.abs());
    }
    let tol = 1e-11 * scale;
    let mut rank = 0;
    for col in 0..nvars {
        if rank == me {
            break;
        }
        let mut pivot = rank;
        for r in rank + 1..me {
            if aug[(r, col)].abs() > aug[(pivot, col)].abs() {
                pivot = r;
            }
        }
        if aug[(pivot, col)].abs() <= tol {
            continue;
        }
        aug.swap_rows(rank, pivot);
        let p = aug[(rank, col)];
        for r in 0..me {
            if r == rank {
                continue;
            }
            let factor = aug[(r, col)] / p;
            if factor != 0.0 {
                for c in col..=nvars {
                    let v = aug[(rank, c)];
                    aug[(r, c)] -= factor * v;
                }
            }
        }
        rank += 1;
    }
    for r in rank..me {
        if aug[(r, nvars)].abs() > 1e-8 * scale.max(1.0) {
            return None;
        }
    }
    let eq = aug.view((0, 0), (rank, nvars)).into_owned();
    let rhs = aug.view((0, nvars), (rank, 1)).column(0).into_owned();
    Some((eq, rhs))
}

/// Sparse gradient of one row at v: linear terms plus 2c·v on quadratic vars.
fn row_gradient(row: &QuadRow, v: &DVector<f64>, out: &mut Vec<(usize, f64)>) {
    out.clear();
    out.extend(row.terms.iter().copied());
    for &(i, c) in &row.quad {
        out.push((i, 2.0 * c * v[i]));
    }
}

enum StageEnd {
    Converged,
    EarlyStop,
    Stalled,
}

/// One barrier stage: Newton-minimize t·cᵀv − Σ ln(−f_i) over Ev = d.
#[allow(clippy::too_many_arguments)]
fn newton_stage(
    p: &Program,
    t: f64,
    v: &mut DVector<f64>,
    opts: &IpmOptions,
    kkt: &mut DMatrix<f64>,
    rhs: &mut DVector<f64>,
    grad_buf: &mut Vec<(usize, f64)>,
    early_stop: &mut dyn FnMut(&DVector<f64>) -> bool,
) -> Result<StageEnd> {
    let n = p.nvars;
    let me = p.eq.nrows();
    let dim = n + me;
    let barrier = |v: &DVector<f64>| -> Option<f64> {
        let mut b = t * p.objective_value(v);
        for row in &p.ineq {
            let f = row.value(v);
            if f >= 0.0 {
                return None;
            }
            b -= (-f).ln();
        }
        Some(b)
    };
    for _ in 0..opts.max_inner {
        kkt.fill(0.0);
        rhs.fill(0.0);
        for &(i, c) in &p.objective {
            rhs[i] -= t * c;
        }
        for row in &p.ineq {
            let f = row.value(v);
            if f >= 0.0 {
                return Err(Error::SubsolverFailure(
                    "barrier iterate left the strict interior".into(),
                ));
            }
            let inv = -1.0 / f;
            row_gradient(row, v, grad_buf);
            for &(i, gi) in grad_buf.iter() {
                rhs[i] -= gi * inv;
                for &(j, gj) in grad_buf.iter() {
                    kkt[(i, j)] += gi * gj * inv * inv;
                }
            }
            for &(i, c) in &row.quad {
                kkt[(i, i)] += 2.0 * c * inv;
            }
        }
        for r in 0..me {
            for c in 0..n {
                let e = p.eq[(r, c)];
                kkt[(n + r, c)] = e;
                kkt[(c, n + r)] = e;
            }
        }
        // Factor, retrying with diagonal regularization on the primal block.
        let mut step = None;
        let mut nu = 0.0;
        let diag_scale = (0..n).map(|i| kkt[(i, i)].abs()).fold(1.0f64, f64::max);
        for _ in 0..30 {
            let mut m = kkt.clone();
            for i in 0..n {
                m[(i, i)] += nu;
            }
            let lu = m.clone().lu();
            if let Some(mut sol) = lu.solve(rhs) {
                if sol.iter().all(|x| x.is_finite()) {
                    // One round of iterative refinement; the barrier Hessian
                    // near a tight corner is ill-conditioned enough that the
                    // raw solve can miss the descent direction.
                    let residual = &*rhs - &m * &sol;
                    if let Some(corr) = lu.solve(&residual) {
                        if corr.iter().all(|x| x.is_finite()) {
                            sol += corr;
                        }
                    }
                    step = Some(sol);
                    break;
                }
            }
            nu = if nu == 0.0 { 1e-12 * diag_scale } else { nu * 10.0 };
        }
        let Some(sol) = step else {
            return Err(Error::SubsolverFailure(
                "interior-point KKT system could not be factored".into(),
            ));
        };
        let dv = sol.rows(0, n).into_owned();
        let _ = dim;
        // rhs holds −g, so the predicted decrease is gᵀdv = −rhsᵀdv.
        let descent: f64 = (0..n).map(|i| rhs[i] * dv[i]).sum();
        if descent / 2.0 <= opts.inner_tol * (1.0 + t.abs()) {
            return Ok(StageEnd::Converged);
        }
        let b0 = barrier(v).ok_or_else(|| {
            Error::SubsolverFailure("barrier evaluated outside the interior".into())
        })?;
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..140 {
            let cand = &*v + alpha * &dv;
            if let Some(b) = barrier(&cand) {
                if b <= b0 - 0.25 * alpha * descent {
                    *v = cand;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.6;
        }
        if !accepted {
            return Ok(StageEnd::Stalled);
        }
        if early_stop(v) {
            return Ok(StageEnd::EarlyStop);
        }
    }
    // Exhausting the iteration budget is not convergence; claiming it would
    // certify a gap the point does not satisfy.
    Ok(StageEnd::Stalled)
}

/// Follow the central path until the barrier gap target is met.
///
/// The returned gap is certified: it is m/t for the largest t at which a
/// stage actually passed the Newton decrement test, and `v` is left at that
/// centered point. A stage that stalls is retried from the last centered
/// point with a smaller weight increase; if even tiny increases stall, the
/// path returns what it has certified (infinity when nothing ever centered).
fn central_path(
    p: &Program,
    v: &mut DVector<f64>,
    opts: &IpmOptions,
    gap_tol: f64,
    early_stop: Option<&mut dyn FnMut(&DVector<f64>) -> bool>,
) -> Result<f64> {
    let m = p.ineq.len().max(1) as f64;
    let n = p.nvars;
    let me = p.eq.nrows();
    let mut kkt = DMatrix::zeros(n + me, n + me);
    let mut rhs = DVector::zeros(n + me);
    let mut grad_buf = Vec::new();
    let mut t = opts.t0;
    let mut certified: Option<(DVector<f64>, f64)> = None;
    let mut factor = opts.mu;
    let mut cold_retries = 0;
    let mut noop = |_: &DVector<f64>| false;
    let stop: &mut dyn FnMut(&DVector<f64>) -> bool = match early_stop {
        Some(f) => f,
        None => &mut noop,
    };
    loop {
        let end = newton_stage(
            p,
            t,
            v,
            opts,
            &mut kkt,
            &mut rhs,
            &mut grad_buf,
            &mut *stop,
        )?;
        match end {
            StageEnd::EarlyStop => return Ok(m / t),
            StageEnd::Converged => {
                let gap = m / t;
                if gap <= gap_tol * (1.0 + p.objective_value(v).abs()) {
                    return Ok(gap);
                }
                certified = Some((v.clone(), t));
                factor = opts.mu;
                t *= factor;
            }
            StageEnd::Stalled => match &certified {
                Some((vc, tc)) => {
                    factor = factor.sqrt();
                    if factor < 1.05 {
                        let (vc, tc) = certified.unwrap();
                        *v = vc;
                        return Ok(m / tc);
                    }
                    v.copy_from(vc);
                    t = tc * factor;
                }
                None => {
                    // The initial weight is already too aggressive for this
                    // start; back off toward the analytic center.
                    cold_retries += 1;
                    if cold_retries > 8 {
                        return Ok(f64::INFINITY);
                    }
                    t *= 0.1;
                }
            },
        }
    }
}

/// Solve the relaxation of a model. Infeasibility of the constraint set is a
/// regular outcome; errors are reserved for numerical breakdown.
pub fn solve_qcqp(model: &Model, opts: &IpmOptions) -> Result<IpmOutcome> {
    let Some((eq, rhs)) = reduce_equalities(&model.eq, model.nvars) else {
        return Ok(IpmOutcome::Infeasible { slack: f64::INFINITY });
    };
    // Minimum-norm equality-feasible start.
    let mut v = if eq.nrows() > 0 {
        let svd = eq.clone().svd(true, true);
        svd.solve(&rhs, 1e-12)
            .map_err(|e| Error::SubsolverFailure(e.to_string()))?
    } else {
        DVector::zeros(model.nvars)
    };
    if model.ineq.is_empty() {
        let objective = model.objective_value(&v);
        return Ok(IpmOutcome::Optimal {
            v,
            objective,
            gap: 0.0,
        });
    }

    // Rows mix units (squared pressures around 1e3, flows around 1e1), so
    // interior margins only mean anything after normalizing each row by its
    // largest coefficient.
    let row_scale: Vec<f64> = model
        .ineq
        .iter()
        .map(|row| {
            let mut m = row.cst.abs();
            for &(_, a) in &row.terms {
                m = m.max(a.abs());
            }
            for &(_, c) in &row.quad {
                m = m.max(c.abs());
            }
            if m > 0.0 {
                m
            } else {
                1.0
            }
        })
        .collect();
    let worst = |v: &DVector<f64>| {
        model
            .ineq
            .iter()
            .zip(&row_scale)
            .map(|(r, &s)| r.value(v) / s)
            .fold(f64::NEG_INFINITY, f64::max)
    };
    if worst(&v) >= -opts.feas_margin {
        // Phase I: minimize s subject to f_i(v)/scale_i ≤ s, s ≥ −1.
        let n = model.nvars;
        let s = n;
        let mut ineq: Vec<QuadRow> = model
            .ineq
            .iter()
            .zip(&row_scale)
            .map(|(row, &sc)| QuadRow {
                quad: row.quad.iter().map(|&(i, c)| (i, c / sc)).collect(),
                terms: row
                    .terms
                    .iter()
                    .map(|&(i, a)| (i, a / sc))
                    .chain([(s, -1.0)])
                    .collect(),
                cst: row.cst / sc,
            })
            .collect();
        ineq.push(QuadRow {
            quad: Vec::new(),
            terms: vec![(s, -1.0)],
            cst: -1.0,
        });
        let mut eq1 = eq.clone();
        eq1 = eq1.insert_column(n, 0.0);
        let phase1 = Program {
            nvars: n + 1,
            objective: vec![(s, 1.0)],
            eq: eq1,
            ineq,
        };
        let s0 = (worst(&v) + 1.0).max(-0.5);
        let mut v1 = v.clone().insert_row(n, s0);
        // Hand the main path a point well inside the interior; stopping at
        // the margin itself starts the barrier against near-active rows.
        let margin = 10.0 * opts.feas_margin;
        let mut strict = |cand: &DVector<f64>| -> bool {
            let head = cand.rows(0, n).into_owned();
            worst(&head) <= -margin
        };
        central_path(&phase1, &mut v1, opts, 1e-10, Some(&mut strict))?;
        let head = v1.rows(0, n).into_owned();
        let achieved = worst(&head);
        if achieved > -1e-9 {
            return Ok(IpmOutcome::Infeasible {
                slack: achieved.max(v1[s]),
            });
        }
        v = head;
    }

    let program = Program {
        nvars: model.nvars,
        objective: model.objective.clone(),
        eq,
        ineq: model.ineq.clone(),
    };
    let gap = central_path(&program, &mut v, opts, opts.gap_tol, None)?;
    let objective = program.objective_value(&v);
    Ok(IpmOutcome::Optimal { v, objective, gap })
}
