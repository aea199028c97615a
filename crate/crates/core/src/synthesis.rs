//! Solving the design-point LMIs, one point at a time or jointly.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lmi::{add_design_point, LmiContext, LmiSolution, VarLayout, Y_MIN};
use crate::solver::{solve_feasibility, AffineBlock, ConicProblem, SolveStatus, SolverOptions};

const S_ENTRY_BOUND: f64 = 1e6;

/// What to optimize over the feasible set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Any feasible point.
    #[default]
    Feasibility,
    /// Minimize an upper bound on `trace(Y^{-1})`, which tightens the cost
    /// bound.
    TraceInverse,
}

#[derive(Debug, Clone)]
pub struct SynthesisOptions {
    pub objective: Objective,
    /// Solve all points in one problem with `-delta I <= Y_s - Y_{s+1} <= delta I`
    /// between neighbors. Smaller `delta` gives a slower-varying schedule.
    pub proximity: Option<f64>,
    pub y_min: f64,
    /// Overrides the per-point default margin.
    pub margin: Option<f64>,
    pub solver: SolverOptions,
}

impl Default for SynthesisOptions {
    fn default() -> Self {
        Self {
            objective: Objective::Feasibility,
            proximity: None,
            y_min: Y_MIN,
            margin: None,
            solver: SolverOptions::default(),
        }
    }
}

/// Solver outcome for one design point.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PointReport {
    pub rho_s: f64,
    pub beta_s: f64,
    pub status: SolveStatus,
    /// Worst node margin at the returned point (negative if none).
    pub margin: f64,
    pub required_margin: f64,
    pub iterations: usize,
    pub method: String,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutcome {
    pub reports: Vec<PointReport>,
    /// Present iff every point is feasible.
    pub solutions: Option<Vec<LmiSolution>>,
}

impl SynthesisOutcome {
    pub fn all_feasible(&self) -> bool {
        self.solutions.is_some()
    }

    /// Solutions, or an `Infeasible` error naming the first failed point.
    pub fn into_solutions(self) -> Result<Vec<LmiSolution>> {
        match self.solutions {
            Some(s) => Ok(s),
            None => {
                let bad = self
                    .reports
                    .iter()
                    .find(|r| r.status != SolveStatus::Feasible)
                    .expect("some point failed");
                Err(Error::Infeasible {
                    rho: bad.rho_s,
                    detail: format!("{:?} after {} iterations ({})", bad.status, bad.iterations, bad.method),
                })
            }
        }
    }
}

struct PointVars {
    layout: VarLayout,
    s: Vec<(usize, usize, usize)>,
}

fn add_point(
    problem: &mut ConicProblem,
    ctx: &LmiContext,
    rho_s: f64,
    beta_s: f64,
    opts: &SynthesisOptions,
) -> Result<(PointVars, f64)> {
    let margin = opts.margin.unwrap_or_else(|| ctx.default_margin(rho_s));
    let layout = add_design_point(problem, ctx, rho_s, beta_s, false, margin, opts.y_min)?;
    let mut s = Vec::new();
    if opts.objective == Objective::TraceInverse {
        let n = layout.n;
        for r in 0..n {
            for c in r..n {
                let (lo, start) = if r == c { (0.0, 1.0) } else { (-S_ENTRY_BOUND, 0.0) };
                s.push((r, c, problem.add_var(format!("rho={rho_s} S[{r},{c}]"), lo, S_ENTRY_BOUND, start)));
            }
        }
        // [[S, I], [I, Y]] >= 0
        let mut b = AffineBlock::new(format!("rho={rho_s} trace bound"), 2 * n, 0.0);
        b.add_sub(None, n, 0, &DMatrix::identity(n, n), -1.0);
        for &(r, c, idx) in &s {
            b.add_sub(Some(idx), 0, 0, &VarLayout::basis(n, r, c), -1.0);
        }
        for &(r, c, idx) in &layout.y {
            b.add_sub(Some(idx), n, n, &VarLayout::basis(n, r, c), -1.0);
        }
        problem.push_block(b);
    }
    Ok((PointVars { layout, s }, margin))
}

fn finish_objective(problem: &mut ConicProblem, points: &[PointVars]) {
    if points.iter().all(|p| p.s.is_empty()) {
        return;
    }
    let mut c = DVector::zeros(problem.n_vars());
    for p in points {
        for &(r, col, idx) in &p.s {
            if r == col {
                c[idx] = 1.0;
            }
        }
    }
    problem.set_objective(c);
}

fn extract(ctx: &LmiContext, vars: &PointVars, x: &DVector<f64>, rho_s: f64, beta_s: f64) -> Result<LmiSolution> {
    let y = vars.layout.extract_y(x);
    let multipliers = vars.layout.extract_multipliers(x);
    let margin = -ctx.worst_eigenvalue(rho_s, beta_s, &y, &multipliers)?;
    Ok(LmiSolution {
        rho_s,
        y,
        multipliers,
        margin,
        beta_s,
    })
}

/// Solve the full LMIs at one design point.
pub fn solve_point(ctx: &LmiContext, rho_s: f64, beta_s: f64, opts: &SynthesisOptions) -> Result<(PointReport, Option<LmiSolution>)> {
    let mut problem = ConicProblem::new();
    let (vars, required) = add_point(&mut problem, ctx, rho_s, beta_s, opts)?;
    finish_objective(&mut problem, std::slice::from_ref(&vars));
    let res = solve_feasibility(&problem, &opts.solver)?;
    let sol = match &res.x {
        Some(x) if res.status == SolveStatus::Feasible => Some(extract(ctx, &vars, x, rho_s, beta_s)?),
        _ => None,
    };
    let report = PointReport {
        rho_s,
        beta_s,
        status: res.status,
        margin: sol.as_ref().map_or(res.achieved_margin, |s| s.margin),
        required_margin: required,
        iterations: res.iterations,
        method: res.method.to_string(),
    };
    Ok((report, sol))
}

/// Solve every design point. Without `proximity` the points are
/// independent and run in parallel; with it they share one problem.
pub fn synthesize(ctx: &LmiContext, points: &[f64], betas: &[f64], opts: &SynthesisOptions) -> Result<SynthesisOutcome> {
    if points.len() != betas.len() || points.is_empty() {
        return Err(Error::Validation(format!(
            "{} design points and {} betas",
            points.len(),
            betas.len()
        )));
    }
    if let Some(delta) = opts.proximity {
        if !(delta >= 0.0 && delta.is_finite()) {
            return Err(Error::Validation(format!("proximity must be a nonnegative number, got {delta}")));
        }
        if points.len() > 1 {
            return synthesize_joint(ctx, points, betas, delta, opts);
        }
    }
    let pairs: Vec<(f64, f64)> = points.iter().copied().zip(betas.iter().copied()).collect();
    let results = crate::par::map(&pairs, |&(rho, beta)| solve_point(ctx, rho, beta, opts));
    let mut reports = Vec::new();
    let mut sols = Vec::new();
    for r in results {
        let (rep, sol) = r?;
        reports.push(rep);
        sols.push(sol);
    }
    let solutions = sols.into_iter().collect::<Option<Vec<_>>>();
    Ok(SynthesisOutcome { reports, solutions })
}

fn synthesize_joint(ctx: &LmiContext, points: &[f64], betas: &[f64], delta: f64, opts: &SynthesisOptions) -> Result<SynthesisOutcome> {
    let mut problem = ConicProblem::new();
    let mut vars = Vec::new();
    let mut required = Vec::new();
    for (&rho, &beta) in points.iter().zip(betas) {
        let (v, m) = add_point(&mut problem, ctx, rho, beta, opts)?;
        vars.push(v);
        required.push(m);
    }
    let n = ctx.plant.n;
    for s in 0..points.len() - 1 {
        for sign in [1.0, -1.0] {
            // sign (Y_s - Y_{s+1}) - delta I <= 0
            let mut b = AffineBlock::new(format!("proximity {s}/{} {sign:+}", s + 1), n, 0.0);
            b.add_identity(None, 0, n, -delta);
            for (&(r, c, a), &(_, _, bidx)) in vars[s].layout.y.iter().zip(&vars[s + 1].layout.y) {
                let e = VarLayout::basis(n, r, c);
                b.add_sub(Some(a), 0, 0, &e, sign);
                b.add_sub(Some(bidx), 0, 0, &e, -sign);
            }
            problem.push_block(b);
        }
    }
    finish_objective(&mut problem, &vars);
    let res = solve_feasibility(&problem, &opts.solver)?;
    let mut reports = Vec::new();
    let mut sols = Vec::new();
    for (k, (&rho, &beta)) in points.iter().zip(betas).enumerate() {
        let sol = match &res.x {
            Some(x) if res.status == SolveStatus::Feasible => Some(extract(ctx, &vars[k], x, rho, beta)?),
            _ => None,
        };
        reports.push(PointReport {
            rho_s: rho,
            beta_s: beta,
            status: res.status,
            margin: sol.as_ref().map_or(res.achieved_margin, |s| s.margin),
            required_margin: required[k],
            iterations: res.iterations,
            method: format!("joint {}", res.method),
        });
        sols.push(sol);
    }
    Ok(SynthesisOutcome {
        reports,
        solutions: sols.into_iter().collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::NetworkTopology;
    use crate::plant::{CouplingShape, LpvPlant};
    use crate::solver::eig::lambda_max;

    fn ctx() -> LmiContext {
        let t = NetworkTopology::from_edges(2, [(0, 1), (1, 0), (1, 2), (2, 1)], [(1, 2)], vec![true, false]).unwrap();
        let plant = LpvPlant::new(
            vec![
                DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
                DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 0.4, 0.0]),
            ],
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            (-1.0, 1.0),
        )
        .unwrap();
        let c = DMatrix::from_row_slice(1, 2, &[0.1, 0.1]);
        let couplings = CouplingShape {
            c: t.coupling_edges.iter().map(|&e| (e, c.clone())).collect(),
        };
        LmiContext::new(plant, t, couplings, &DMatrix::identity(2, 2), &DMatrix::from_element(1, 1, 0.1)).unwrap()
    }

    #[test]
    fn small_network_feasible_and_certified() {
        let ctx = ctx();
        let (rep, sol) = solve_point(&ctx, 0.5, 0.2, &SynthesisOptions::default()).unwrap();
        assert_eq!(rep.status, SolveStatus::Feasible);
        let sol = sol.unwrap();
        assert!(sol.margin >= 0.5 * rep.required_margin);
        for i in 1..=2 {
            let pi = ctx.build_pi(i, 0.5, 0.2, &sol.y, &sol.multipliers).unwrap();
            assert!(lambda_max(&pi).unwrap() < 0.0);
            let ric = ctx.riccati_residual(i, 0.5, 0.2, &sol.y, &sol.multipliers).unwrap();
            assert!(lambda_max(&ric).unwrap() < 0.0);
        }
    }

    #[test]
    fn trace_objective_shrinks_inverse() {
        let ctx = ctx();
        let plain = solve_point(&ctx, 0.0, 0.2, &SynthesisOptions::default()).unwrap().1.unwrap();
        let opts = SynthesisOptions {
            objective: Objective::TraceInverse,
            ..Default::default()
        };
        let tight = solve_point(&ctx, 0.0, 0.2, &opts).unwrap().1.unwrap();
        let tr = |y: &DMatrix<f64>| y.clone().try_inverse().unwrap().trace();
        assert!(tr(&tight.y) <= tr(&plain.y) * (1.0 + 1e-6));
    }

    #[test]
    fn joint_proximity_is_respected() {
        let ctx = ctx();
        let opts = SynthesisOptions {
            objective: Objective::TraceInverse,
            proximity: Some(0.05),
            ..Default::default()
        };
        let out = synthesize(&ctx, &[-0.5, 0.5], &[0.25, 0.25], &opts).unwrap();
        let sols = out.into_solutions().unwrap();
        let d = &sols[0].y - &sols[1].y;
        assert!(lambda_max(&d).unwrap() <= 0.05 + 1e-8);
        assert!(lambda_max(&(-d)).unwrap() <= 0.05 + 1e-8);
    }

    #[test]
    fn mismatched_inputs_rejected() {
        assert!(synthesize(&ctx(), &[0.0, 0.5], &[0.1], &SynthesisOptions::default()).is_err());
    }
}
