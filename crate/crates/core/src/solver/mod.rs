//! Dense LMI feasibility solver.
//!
//! A [`ConicProblem`] is a list of affine symmetric-matrix-valued maps
//! `F_k(x) = C_k + sum_a x_a F_{k,a}` together with box bounds on `x`. The
//! solver looks for `x` with `F_k(x) <= -margin_k I` for every block, and,
//! when an objective is present, approximately minimizes `c'x` over that
//! set.
//!
//! Two methods are available. Dykstra alternating projections in the lifted
//! space `(x, S_1, .., S_K)` are tried first for pure feasibility problems;
//! a log-det barrier path-following method (phase I on the maximum
//! eigenvalue, then an optional phase II on the objective) is the fallback
//! and the only method used when an objective is set. Whatever the method,
//! a result is reported `Feasible` only after every block has been
//! re-evaluated from scratch at the returned point.

mod barrier;
pub mod eig;
mod projection;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub use eig::{lambda_max, lambda_min, sym_eig, SymEig};

/// One affine LMI block `C + sum_a x_a F_a`, constrained to be
/// `<= -margin * I`.
#[derive(Debug, Clone)]
pub struct AffineBlock {
    pub label: String,
    pub constant: DMatrix<f64>,
    /// `(variable index, coefficient matrix)`, at most one entry per variable.
    pub terms: Vec<(usize, DMatrix<f64>)>,
    pub margin: f64,
}

impl AffineBlock {
    pub fn new(label: impl Into<String>, dim: usize, margin: f64) -> Self {
        Self {
            label: label.into(),
            constant: DMatrix::zeros(dim, dim),
            terms: Vec::new(),
            margin,
        }
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    fn slot(&mut self, var: Option<usize>) -> &mut DMatrix<f64> {
        match var {
            None => &mut self.constant,
            Some(v) => {
                let pos = match self.terms.iter().position(|(idx, _)| *idx == v) {
                    Some(p) => p,
                    None => {
                        let d = self.dim();
                        self.terms.push((v, DMatrix::zeros(d, d)));
                        self.terms.len() - 1
                    }
                };
                &mut self.terms[pos].1
            }
        }
    }

    /// Add `coef * M` at block offset `(row, col)`, mirroring it to
    /// `(col, row)` so the block stays symmetric. When `row == col` the
    /// symmetric part of `M` is added once.
    pub fn add_sub(&mut self, var: Option<usize>, row: usize, col: usize, m: &DMatrix<f64>, coef: f64) {
        let target = self.slot(var);
        if row == col {
            let sym = (m + m.transpose()) * (0.5 * coef);
            let mut view = target.view_mut((row, col), (m.nrows(), m.ncols()));
            view += &sym;
        } else {
            {
                let mut view = target.view_mut((row, col), (m.nrows(), m.ncols()));
                view += m * coef;
            }
            let mut view = target.view_mut((col, row), (m.ncols(), m.nrows()));
            view += m.transpose() * coef;
        }
    }

    /// Add `coef * I_len` on the diagonal starting at `offset`.
    pub fn add_identity(&mut self, var: Option<usize>, offset: usize, len: usize, coef: f64) {
        let target = self.slot(var);
        for k in offset..offset + len {
            target[(k, k)] += coef;
        }
    }

    pub fn eval(&self, x: &DVector<f64>) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for (idx, f) in &self.terms {
            let xv = x[*idx];
            out.zip_apply(f, |o, v| *o += xv * v);
        }
        out
    }
}

/// Joint feasibility (or linear-objective) problem over a flat variable
/// vector.
#[derive(Debug, Clone, Default)]
pub struct ConicProblem {
    pub blocks: Vec<AffineBlock>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Initial guess; need not be feasible.
    pub start: Vec<f64>,
    pub names: Vec<String>,
    pub objective: Option<DVector<f64>>,
}

impl ConicProblem {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn n_vars(&self) -> usize {
        self.lower.len()
    }

    pub fn add_var(&mut self, name: impl Into<String>, lower: f64, upper: f64, start: f64) -> usize {
        assert!(lower < upper, "empty variable interval");
        self.lower.push(lower);
        self.upper.push(upper);
        self.start.push(start);
        self.names.push(name.into());
        self.lower.len() - 1
    }

    pub fn push_block(&mut self, block: AffineBlock) {
        #[cfg(debug_assertions)]
        debug_check_affine(&block, self.n_vars());
        self.blocks.push(block);
    }

    pub fn set_objective(&mut self, c: DVector<f64>) {
        assert_eq!(c.len(), self.n_vars());
        self.objective = Some(c);
    }

    /// Largest eigenvalue of `F_k(x) + margin_k I` over all blocks.
    pub fn worst_violation(&self, x: &DVector<f64>) -> Result<f64> {
        let mut worst = f64::NEG_INFINITY;
        for b in &self.blocks {
            worst = worst.max(lambda_max(&b.eval(x))? + b.margin);
        }
        Ok(worst)
    }
}

#[cfg(debug_assertions)]
fn debug_check_affine(block: &AffineBlock, n_vars: usize) {
    use rand::{Rng, SeedableRng};
    let d = block.dim();
    assert!(block.constant.is_square(), "block {} not square", block.label);
    let sym_err = |m: &DMatrix<f64>| (m - m.transpose()).amax();
    assert!(sym_err(&block.constant) <= 1e-12 * (1.0 + block.constant.amax()));
    for (idx, f) in &block.terms {
        assert!(*idx < n_vars, "block {} references unknown variable {idx}", block.label);
        assert_eq!((f.nrows(), f.ncols()), (d, d));
        assert!(sym_err(f) <= 1e-12 * (1.0 + f.amax()));
    }
    // two-point linearity: F(x) + F(y) == 2 F((x + y) / 2)
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(d as u64 ^ block.terms.len() as u64);
    let x = DVector::from_fn(n_vars, |_, _| rng.gen_range(-1.0..1.0));
    let y = DVector::from_fn(n_vars, |_, _| rng.gen_range(-1.0..1.0));
    let mid = (&x + &y) * 0.5;
    let lhs = block.eval(&x) + block.eval(&y);
    let rhs = block.eval(&mid) * 2.0;
    let scale = 1.0 + lhs.amax();
    assert!((lhs - rhs).amax() <= 1e-10 * scale, "block {} is not affine", block.label);
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Alternating projections first, barrier if they stall.
    Auto,
    Barrier,
    Projection,
}

#[derive(Debug, Clone)]
pub struct SolverOptions {
    /// Newton step budget for the barrier method.
    pub max_iter: usize,
    /// Eigenvalue tolerance used in certificate checks on margin-free blocks.
    pub tol: f64,
    /// Relative duality-gap target for phase II.
    pub gap_tol: f64,
    pub projection_iters: usize,
    pub method: Method,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 800,
            tol: 1e-9,
            gap_tol: 1e-7,
            projection_iters: 3000,
            method: Method::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum SolveStatus {
    Feasible,
    Infeasible,
    MaxIterations,
}

#[derive(Debug, Clone)]
pub struct FeasibilityResult {
    pub status: SolveStatus,
    /// Present when `status == Feasible`.
    pub x: Option<DVector<f64>>,
    /// `min_k (-lambda_max(F_k(x)))` over blocks with a positive margin
    /// requirement (over all blocks when none has one). For non-feasible
    /// outcomes this is the best value seen, and may be negative.
    pub achieved_margin: f64,
    pub iterations: usize,
    pub method: &'static str,
}

/// Independent re-check of a candidate point: every block must satisfy
/// `lambda_max(F_k(x)) <= -margin_k / 2` (or `<= tol` for margin-free
/// blocks) and every variable must lie within its bounds. Returns the
/// achieved margin on success.
pub fn verify_certificate(problem: &ConicProblem, x: &DVector<f64>, tol: f64) -> Result<f64> {
    if x.len() != problem.n_vars() {
        return Err(Error::ShapeMismatch(format!(
            "certificate has {} entries, problem has {} variables",
            x.len(),
            problem.n_vars()
        )));
    }
    for (i, v) in x.iter().enumerate() {
        if !v.is_finite() || *v < problem.lower[i] || *v > problem.upper[i] {
            return Err(Error::Validation(format!(
                "variable {} = {v} outside [{}, {}]",
                problem.names[i], problem.lower[i], problem.upper[i]
            )));
        }
    }
    let lams = crate::par::map(&problem.blocks, |b| lambda_max(&b.eval(x)));
    let mut margin_strict = f64::INFINITY;
    let mut margin_all = f64::INFINITY;
    for (b, lam) in problem.blocks.iter().zip(lams) {
        let lam = lam?;
        let allowed = if b.margin > 0.0 {
            -0.5 * b.margin
        } else {
            tol * (1.0 + b.constant.amax())
        };
        if lam > allowed {
            return Err(Error::Validation(format!(
                "block {} has lambda_max {lam:e} > {allowed:e}",
                b.label
            )));
        }
        margin_all = margin_all.min(-lam);
        if b.margin > 0.0 {
            margin_strict = margin_strict.min(-lam);
        }
    }
    Ok(if margin_strict.is_finite() { margin_strict } else { margin_all })
}

/// Solve `problem`. Deterministic: identical inputs give bit-identical
/// outputs.
pub fn solve_feasibility(problem: &ConicProblem, opts: &SolverOptions) -> Result<FeasibilityResult> {
    if problem.start.len() != problem.n_vars() {
        return Err(Error::ShapeMismatch("start vector length".into()));
    }
    let use_projection = problem.objective.is_none() && matches!(opts.method, Method::Auto | Method::Projection);
    let mut spent = 0;
    if use_projection {
        let res = projection::solve(problem, opts)?;
        spent = res.iterations;
        if res.status == SolveStatus::Feasible || opts.method == Method::Projection {
            return finish(problem, res, opts);
        }
    }
    let mut res = barrier::solve(problem, opts)?;
    res.iterations += spent;
    finish(problem, res, opts)
}

fn finish(problem: &ConicProblem, mut res: FeasibilityResult, opts: &SolverOptions) -> Result<FeasibilityResult> {
    if res.status == SolveStatus::Feasible {
        let x = res.x.as_ref().expect("feasible result carries a point");
        match verify_certificate(problem, x, opts.tol) {
            Ok(m) => res.achieved_margin = m,
            Err(_) => {
                res.status = SolveStatus::MaxIterations;
                res.x = None;
            }
        }
    }
    Ok(res)
}
