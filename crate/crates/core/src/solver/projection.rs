//! Dykstra alternating projections in the lifted space `(x, S_1, .., S_K)`.
//!
//! The two sets are the affine graph `{S_k = F_k(x)}` and the product of
//! shifted negative semidefinite cones `{S_k <= -target_k I}` with the
//! variable box. Feasibility of the actual blocks is checked periodically
//! on the affine iterate.

use nalgebra::{DMatrix, DVector};

use super::eig::sym_eig;
use super::{ConicProblem, FeasibilityResult, SolveStatus, SolverOptions};
use crate::error::{Error, Result};

const CHECK_EVERY: usize = 20;

struct AffineProjector {
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl AffineProjector {
    fn new(problem: &ConicProblem) -> Result<Self> {
        let n = problem.n_vars();
        let mut normal = DMatrix::<f64>::identity(n, n);
        for b in &problem.blocks {
            for (a, fa) in &b.terms {
                for (c, fc) in &b.terms {
                    normal[(*a, *c)] += fa.dot(fc);
                }
            }
        }
        let chol = normal
            .cholesky()
            .ok_or_else(|| Error::NumericalBreakdown("projection normal matrix".into()))?;
        Ok(Self { chol })
    }

    fn project(&self, problem: &ConicProblem, x_hat: &DVector<f64>, s_hat: &[DMatrix<f64>]) -> (DVector<f64>, Vec<DMatrix<f64>>) {
        let mut rhs = x_hat.clone();
        for (b, s) in problem.blocks.iter().zip(s_hat) {
            let resid = s - &b.constant;
            for (a, fa) in &b.terms {
                rhs[*a] += fa.dot(&resid);
            }
        }
        let x = self.chol.solve(&rhs);
        let s = crate::par::map(&problem.blocks, |b| b.eval(&x));
        (x, s)
    }
}

fn project_cone(m: &DMatrix<f64>, target: f64) -> Result<DMatrix<f64>> {
    let e = sym_eig(m)?;
    if e.values.iter().all(|&v| v <= -target) {
        return Ok(m.clone());
    }
    let d = DMatrix::from_diagonal(&e.values.map(|v| v.min(-target)));
    Ok(&e.vectors * d * e.vectors.transpose())
}

pub(super) fn solve(problem: &ConicProblem, opts: &SolverOptions) -> Result<FeasibilityResult> {
    let n = problem.n_vars();
    let proj = AffineProjector::new(problem)?;
    let targets: Vec<f64> = problem
        .blocks
        .iter()
        .map(|b| if b.margin > 0.0 { 2.0 * b.margin } else { opts.tol.max(1e-12) })
        .collect();

    let mut x = DVector::from_vec(problem.start.clone());
    let mut s: Vec<DMatrix<f64>> = problem.blocks.iter().map(|b| b.eval(&x)).collect();
    let mut px = DVector::zeros(n);
    let mut ps: Vec<DMatrix<f64>> = s.iter().map(|m| DMatrix::zeros(m.nrows(), m.ncols())).collect();
    let mut qx = DVector::zeros(n);
    let mut qs = ps.clone();
    let mut best = f64::INFINITY;

    for it in 1..=opts.projection_iters {
        // affine step
        let zx = &x + &px;
        let zs: Vec<DMatrix<f64>> = s.iter().zip(&ps).map(|(a, b)| a + b).collect();
        let (yx, ys) = proj.project(problem, &zx, &zs);
        px = zx - &yx;
        ps = zs.iter().zip(&ys).map(|(a, b)| a - b).collect();

        if it % CHECK_EVERY == 0 {
            let cand = DVector::from_iterator(n, (0..n).map(|i| yx[i].clamp(problem.lower[i], problem.upper[i])));
            let viol = problem.worst_violation(&cand)?;
            best = best.min(viol);
            if viol <= 0.0 && cand.iter().all(|v| v.is_finite()) {
                return Ok(FeasibilityResult {
                    status: SolveStatus::Feasible,
                    x: Some(cand),
                    achieved_margin: -viol,
                    iterations: it,
                    method: "projection",
                });
            }
        }

        // cone and box step
        let wx = &yx + &qx;
        let ws: Vec<DMatrix<f64>> = ys.iter().zip(&qs).map(|(a, b)| a + b).collect();
        let new_x = DVector::from_iterator(n, (0..n).map(|i| wx[i].clamp(problem.lower[i], problem.upper[i])));
        let pairs: Vec<(&DMatrix<f64>, f64)> = ws.iter().zip(targets.iter().copied()).collect();
        let new_s = crate::par::map(&pairs, |(m, t)| project_cone(m, *t))
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
        qx = wx - &new_x;
        qs = ws.iter().zip(&new_s).map(|(a, b)| a - b).collect();
        x = new_x;
        s = new_s;
    }
    Ok(FeasibilityResult {
        status: SolveStatus::MaxIterations,
        x: None,
        achieved_margin: -best,
        iterations: opts.projection_iters,
        method: "projection",
    })
}
