//! Log-det barrier path following.
//!
//! Phase I minimizes `s` subject to `F_k(x) + margin_k I <= s I` and stops
//! as soon as `s < 0`. If the centered phase-I value minus the duality gap
//! bound is still positive the problem is reported infeasible (relative to
//! the variable box). Phase II, run only when an objective is present,
//! minimizes `c'x` over the strictly feasible set.

use nalgebra::{DMatrix, DVector};

use super::{AffineBlock, ConicProblem, FeasibilityResult, SolveStatus, SolverOptions};
use crate::error::{Error, Result};

const MU: f64 = 3.0;
const CENTER_TOL: f64 = 1e-9;
const MAX_INNER: usize = 120;

#[derive(Clone, Copy)]
enum Phase<'a> {
    One,
    Two(&'a DVector<f64>),
}

struct Local {
    logdet: f64,
    idx: Vec<usize>,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
}

struct Eval {
    value: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn slack(block: &AffineBlock, x: &DVector<f64>, s: Option<f64>) -> DMatrix<f64> {
    let mut g = block.eval(x);
    for k in 0..g.nrows() {
        g[(k, k)] += block.margin;
    }
    match s {
        Some(s) => {
            let mut out = -g;
            for k in 0..out.nrows() {
                out[(k, k)] += s;
            }
            out
        }
        None => -g,
    }
}

fn split<'z>(problem: &ConicProblem, z: &'z DVector<f64>, phase: Phase) -> (DVector<f64>, Option<f64>) {
    let n = problem.n_vars();
    let x = z.rows(0, n).into_owned();
    match phase {
        Phase::One => (x, Some(z[n])),
        Phase::Two(_) => (x, None),
    }
}

fn block_local(block: &AffineBlock, x: &DVector<f64>, s: Option<f64>, s_index: usize, derivs: bool) -> Option<Local> {
    let sl = slack(block, x, s);
    let chol = sl.cholesky()?;
    let logdet = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    if !logdet.is_finite() {
        return None;
    }
    if !derivs {
        return Some(Local {
            logdet,
            idx: Vec::new(),
            grad: Vec::new(),
            hess: DMatrix::zeros(0, 0),
        });
    }
    let w = chol.inverse();
    // M_v = W dS/dv, with dS/dx_a = -F_a and dS/ds = I
    let mut idx = Vec::with_capacity(block.terms.len() + 1);
    let mut ms: Vec<DMatrix<f64>> = Vec::with_capacity(block.terms.len() + 1);
    for (a, f) in &block.terms {
        idx.push(*a);
        ms.push(-(&w * f));
    }
    if s.is_some() {
        idx.push(s_index);
        ms.push(w.clone());
    }
    let k = idx.len();
    let grad: Vec<f64> = ms.iter().map(|m| -m.trace()).collect();
    let mut hess = DMatrix::zeros(k, k);
    let mts: Vec<DMatrix<f64>> = ms.iter().map(|m| m.transpose()).collect();
    for a in 0..k {
        for b in a..k {
            // tr(M_a M_b) = sum_ij M_a[i,j] M_b[j,i]
            let v = ms[a].dot(&mts[b]);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    Some(Local { logdet, idx, grad, hess })
}

fn evaluate(problem: &ConicProblem, z: &DVector<f64>, phase: Phase, t: f64, derivs: bool) -> Option<Eval> {
    let n = problem.n_vars();
    let dim = z.len();
    let (x, s) = split(problem, z, phase);
    for i in 0..n {
        if !(x[i] > problem.lower[i] && x[i] < problem.upper[i]) {
            return None;
        }
    }
    let locals = crate::par::map(&problem.blocks, |b| block_local(b, &x, s, n, derivs));
    let mut value = match phase {
        Phase::One => t * z[n],
        Phase::Two(c) => t * c.dot(&x),
    };
    let mut grad = DVector::zeros(if derivs { dim } else { 0 });
    let mut hess = DMatrix::zeros(if derivs { dim } else { 0 }, if derivs { dim } else { 0 });
    if derivs {
        match phase {
            Phase::One => grad[n] = t,
            Phase::Two(c) => grad.rows_mut(0, n).copy_from(&(c * t)),
        }
    }
    for l in locals {
        let l = l?;
        value -= l.logdet;
        if derivs {
            for (a, ia) in l.idx.iter().enumerate() {
                grad[*ia] += l.grad[a];
                for (b, ib) in l.idx.iter().enumerate() {
                    hess[(*ia, *ib)] += l.hess[(a, b)];
                }
            }
        }
    }
    for i in 0..n {
        let (lo, hi) = (problem.lower[i], problem.upper[i]);
        if lo.is_finite() {
            let d = x[i] - lo;
            value -= d.ln();
            if derivs {
                grad[i] -= 1.0 / d;
                hess[(i, i)] += 1.0 / (d * d);
            }
        }
        if hi.is_finite() {
            let d = hi - x[i];
            value -= d.ln();
            if derivs {
                grad[i] += 1.0 / d;
                hess[(i, i)] += 1.0 / (d * d);
            }
        }
    }
    if !value.is_finite() {
        return None;
    }
    Some(Eval { value, grad, hess })
}

fn barrier_degree(problem: &ConicProblem) -> f64 {
    let blocks: usize = problem.blocks.iter().map(|b| b.dim()).sum();
    let bounds = problem
        .lower
        .iter()
        .chain(problem.upper.iter())
        .filter(|v| v.is_finite())
        .count();
    (blocks + bounds) as f64
}

fn newton_direction(e: &Eval) -> Result<DVector<f64>> {
    let n = e.grad.len();
    // symmetric Jacobi scaling; bound terms can spread the diagonal over many decades
    let scale: Vec<f64> = (0..n)
        .map(|i| {
            let d = e.hess[(i, i)];
            if d > 0.0 && d.is_finite() { 1.0 / d.sqrt() } else { 1.0 }
        })
        .collect();
    let mut hs = e.hess.clone();
    for i in 0..n {
        for j in 0..n {
            hs[(i, j)] *= scale[i] * scale[j];
        }
    }
    let gs = DVector::from_iterator(n, (0..n).map(|i| -e.grad[i] * scale[i]));
    let mut reg = 0.0;
    for _ in 0..12 {
        let mut h = hs.clone();
        if reg > 0.0 {
            for i in 0..n {
                h[(i, i)] += reg;
            }
        }
        if let Some(ch) = h.cholesky() {
            let mut d = ch.solve(&gs);
            for i in 0..n {
                d[i] *= scale[i];
            }
            if d.iter().all(|v| v.is_finite()) {
                return Ok(d);
            }
        }
        reg = if reg == 0.0 { 1e-14 } else { reg * 100.0 };
    }
    Err(Error::NumericalBreakdown("barrier Hessian is not positive definite".into()))
}

enum Centering {
    Centered,
    EarlyExit,
    Budget,
}

/// Damped Newton on the barrier function at fixed `t`.
fn center(
    problem: &ConicProblem,
    z: &mut DVector<f64>,
    phase: Phase,
    t: f64,
    used: &mut usize,
    budget: usize,
    early_exit: &dyn Fn(&DVector<f64>) -> bool,
) -> Result<Centering> {
    let n = problem.n_vars();
    for _ in 0..MAX_INNER {
        if *used >= budget {
            return Ok(Centering::Budget);
        }
        let e = evaluate(problem, z, phase, t, true)
            .ok_or_else(|| Error::NumericalBreakdown("barrier iterate left the domain".into()))?;
        let dir = newton_direction(&e)?;
        let decrement = -e.grad.dot(&dir);
        *used += 1;
        if decrement * 0.5 <= CENTER_TOL {
            return Ok(Centering::Centered);
        }
        // largest step keeping scalar bounds strict
        let mut alpha: f64 = 1.0;
        for i in 0..n {
            let d = dir[i];
            if d < 0.0 && problem.lower[i].is_finite() {
                alpha = alpha.min(0.99 * (z[i] - problem.lower[i]) / -d);
            } else if d > 0.0 && problem.upper[i].is_finite() {
                alpha = alpha.min(0.99 * (problem.upper[i] - z[i]) / d);
            }
        }
        let mut accepted = false;
        for _ in 0..80 {
            let trial = &*z + &dir * alpha;
            if let Some(te) = evaluate(problem, &trial, phase, t, false) {
                if te.value <= e.value - 0.25 * alpha * decrement {
                    *z = trial;
                    accepted = true;
                    break;
                }
            }
            alpha *= 0.5;
        }
        if !accepted {
            // no progress possible at this t; treat as centered
            return Ok(Centering::Centered);
        }
        if early_exit(z) {
            return Ok(Centering::EarlyExit);
        }
    }
    Ok(Centering::Centered)
}

fn interior_start(problem: &ConicProblem) -> DVector<f64> {
    DVector::from_iterator(
        problem.n_vars(),
        (0..problem.n_vars()).map(|i| {
            let (lo, hi, s) = (problem.lower[i], problem.upper[i], problem.start[i]);
            if s > lo && s < hi {
                s
            } else if lo.is_finite() && hi.is_finite() {
                0.5 * (lo + hi)
            } else if lo.is_finite() {
                lo + 1.0
            } else {
                hi - 1.0
            }
        }),
    )
}

pub(super) fn solve(problem: &ConicProblem, opts: &SolverOptions) -> Result<FeasibilityResult> {
    let n = problem.n_vars();
    let x0 = interior_start(problem);
    let worst = problem.worst_violation(&x0)?;
    let s0 = worst + worst.abs().max(1.0) * 0.5;
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(&x0);
    z[n] = s0;

    let m = barrier_degree(problem) + 1.0;
    let mut t = m / (worst.abs() + 1.0);
    let mut used = 0usize;
    let below_zero = |z: &DVector<f64>| z[n] < 0.0;
    let mut best_s = z[n];

    // phase I
    let feasible_x = loop {
        if below_zero(&z) {
            break z.rows(0, n).into_owned();
        }
        let outcome = center(problem, &mut z, Phase::One, t, &mut used, opts.max_iter, &below_zero)?;
        best_s = best_s.min(z[n]);
        match outcome {
            Centering::EarlyExit => break z.rows(0, n).into_owned(),
            Centering::Budget => {
                return Ok(FeasibilityResult {
                    status: SolveStatus::MaxIterations,
                    x: None,
                    achieved_margin: -best_s,
                    iterations: used,
                    method: "barrier",
                })
            }
            Centering::Centered => {
                if below_zero(&z) {
                    break z.rows(0, n).into_owned();
                }
                if z[n] - 1.5 * m / t > 0.0 {
                    return Ok(FeasibilityResult {
                        status: SolveStatus::Infeasible,
                        x: None,
                        achieved_margin: -best_s,
                        iterations: used,
                        method: "barrier",
                    });
                }
            }
        }
        t *= MU;
        if !t.is_finite() {
            return Err(Error::NumericalBreakdown("barrier parameter overflow".into()));
        }
    };

    let Some(c) = problem.objective.as_ref() else {
        return Ok(FeasibilityResult {
            status: SolveStatus::Feasible,
            x: Some(feasible_x),
            achieved_margin: -z[n],
            iterations: used,
            method: "barrier",
        });
    };

    // phase II
    let m2 = barrier_degree(problem);
    let mut x = feasible_x;
    let mut t = m2 / c.dot(&x).abs().max(1.0);
    let never = |_: &DVector<f64>| false;
    loop {
        let outcome = center(problem, &mut x, Phase::Two(c), t, &mut used, opts.max_iter, &never)?;
        if let Centering::Budget = outcome {
            // x is still strictly feasible; report it
            break;
        }
        if m2 / t <= opts.gap_tol * c.dot(&x).abs().max(1.0) {
            break;
        }
        t *= MU;
    }
    Ok(FeasibilityResult {
        status: SolveStatus::Feasible,
        x: Some(x),
        achieved_margin: 0.0,
        iterations: used,
        method: "barrier",
    })
}
