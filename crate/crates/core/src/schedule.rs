//! Design grid, coverage sets, solution interpolation, the scheduled gain
//! and the rate condition.

use std::path::Path;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::ConsensusConstants;
use crate::lmi::{LmiContext, LmiSolution, MultiplierSet};
use crate::plant::{parse_error, LpvPlant};
use crate::solver::eig::{lambda_min, spd_inverse, spectral_norm};

const RANGE_SLACK: f64 = 1e-12;
const SCAN_STEPS: usize = 2000;
const GOLDEN_TOL: f64 = 1e-6;

/// `max sigma_max(A(rho) - A(rho_s))` over `rho` in `[lo, hi]`.
fn max_deviation(plant: &LpvPlant, rho_s: f64, lo: f64, hi: f64) -> f64 {
    let a_s = plant.eval_a(rho_s);
    let dev = |rho: f64| spectral_norm(&(plant.eval_a(rho) - &a_s));
    if plant.degree() <= 1 {
        // affine: the deviation is |rho - rho_s| * sigma_max(A_1), largest at an end
        return dev(lo).max(dev(hi));
    }
    let mut best = dev(lo).max(dev(hi));
    for k in 0..=SCAN_STEPS {
        best = best.max(dev(lo + (hi - lo) * k as f64 / SCAN_STEPS as f64));
    }
    best
}

/// Smallest `beta` with `(A(rho) - A(rho_0))'(A(rho) - A(rho_0)) <= beta^2 I`
/// on the whole parameter interval.
pub fn beta_for_point(plant: &LpvPlant, rho_0: f64) -> f64 {
    max_deviation(plant, rho_0, plant.gamma.0, plant.gamma.1)
}

/// Largest interval around `rho_s`, inside the parameter interval, on which
/// `sigma_max(A(rho) - A(rho_s)) <= beta_s`.
pub fn coverage_interval(plant: &LpvPlant, rho_s: f64, beta_s: f64) -> (f64, f64) {
    let (g_lo, g_hi) = plant.gamma;
    let a_s = plant.eval_a(rho_s);
    let dev = |rho: f64| spectral_norm(&(plant.eval_a(rho) - &a_s));
    if plant.degree() == 0 {
        return (g_lo, g_hi);
    }
    if plant.degree() == 1 {
        let slope = spectral_norm(&plant.a_coeffs[1]);
        let r = beta_s / slope;
        return ((rho_s - r).max(g_lo), (rho_s + r).min(g_hi));
    }
    let reach = |end: f64| -> f64 {
        let mut inside = rho_s;
        for k in 1..=SCAN_STEPS {
            let probe = rho_s + (end - rho_s) * k as f64 / SCAN_STEPS as f64;
            if dev(probe) > beta_s {
                let mut out = probe;
                for _ in 0..80 {
                    let mid = 0.5 * (inside + out);
                    if dev(mid) > beta_s {
                        out = mid;
                    } else {
                        inside = mid;
                    }
                }
                return inside;
            }
            inside = probe;
        }
        end
    };
    (reach(g_lo), reach(g_hi))
}

/// Design points, their coverage sets and the interpolation bands.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignGrid {
    pub points: Vec<f64>,
    pub betas: Vec<f64>,
    /// Coverage set of each point.
    pub coverage: Vec<(f64, f64)>,
    /// `(lower, upper)` ends of the interpolation band between points `s`
    /// and `s + 1`.
    pub corners: Vec<(f64, f64)>,
    pub gamma: (f64, f64),
}

impl DesignGrid {
    /// Validate coverage and place corners at 25% and 75% of each overlap.
    pub fn new(plant: &LpvPlant, points: Vec<f64>, betas: Vec<f64>) -> Result<Self> {
        if points.is_empty() || points.len() != betas.len() {
            return Err(Error::Validation(format!(
                "{} design points and {} betas",
                points.len(),
                betas.len()
            )));
        }
        let (g_lo, g_hi) = plant.gamma;
        for w in points.windows(2) {
            if !(w[0] < w[1]) {
                return Err(Error::Validation("design points must be strictly ascending".into()));
            }
        }
        for &p in &points {
            if !plant.contains(p) {
                return Err(Error::OutOfRange { rho: p, lo: g_lo, hi: g_hi });
            }
        }
        if let Some(b) = betas.iter().find(|b| !(**b >= 0.0 && b.is_finite())) {
            return Err(Error::Validation(format!("beta {b} must be nonnegative")));
        }
        let coverage: Vec<_> = points
            .iter()
            .zip(&betas)
            .map(|(&p, &b)| coverage_interval(plant, p, b))
            .collect();
        let first = coverage[0];
        let last = coverage[coverage.len() - 1];
        if first.0 > g_lo + RANGE_SLACK || last.1 < g_hi - RANGE_SLACK {
            return Err(Error::Coverage(format!(
                "the end points of [{g_lo}, {g_hi}] are not covered (first set {first:?}, last set {last:?})"
            )));
        }
        let mut corners = Vec::new();
        for s in 0..points.len() - 1 {
            let lo = coverage[s + 1].0.max(points[s]);
            let hi = coverage[s].1.min(points[s + 1]);
            if hi <= lo {
                return Err(Error::NoOverlap(s + 1, s + 2));
            }
            corners.push((lo + 0.25 * (hi - lo), lo + 0.75 * (hi - lo)));
        }
        Ok(Self {
            points,
            betas,
            coverage,
            corners,
            gamma: plant.gamma,
        })
    }

    /// Uniform grid with spacing below 1.5 coverage radii for a common
    /// `beta`. One point (the midpoint) when it already covers everything.
    pub fn auto_with_beta(plant: &LpvPlant, beta: f64) -> Result<Self> {
        let (g_lo, g_hi) = plant.gamma;
        let mid = 0.5 * (g_lo + g_hi);
        let cov = coverage_interval(plant, mid, beta);
        if cov.0 <= g_lo + RANGE_SLACK && cov.1 >= g_hi - RANGE_SLACK {
            return Self::new(plant, vec![mid], vec![beta]);
        }
        let radius = (0..=16)
            .map(|k| {
                let p = g_lo + (g_hi - g_lo) * k as f64 / 16.0;
                let (lo, hi) = coverage_interval(plant, p, beta);
                (p - lo).max(hi - p).min(if lo > g_lo { p - lo } else { f64::INFINITY }).min(if hi < g_hi {
                    hi - p
                } else {
                    f64::INFINITY
                })
            })
            .fold(f64::INFINITY, f64::min);
        if !(radius > 0.0) {
            return Err(Error::Coverage(format!("beta = {beta} gives empty coverage sets")));
        }
        let width = g_hi - g_lo;
        let mut m = 2;
        while width / (m - 1) as f64 >= 1.5 * radius {
            m += 1;
            if m > 100_000 {
                return Err(Error::Coverage("grid would need more than 100000 points".into()));
            }
        }
        let points = uniform(plant.gamma, m);
        Self::new(plant, points, vec![beta; m])
    }

    /// `count` uniform points, each `beta_s` chosen so its coverage radius
    /// equals the spacing.
    pub fn auto_with_count(plant: &LpvPlant, count: usize) -> Result<Self> {
        if count == 0 {
            return Err(Error::Validation("grid needs at least one point".into()));
        }
        let points = uniform(plant.gamma, count);
        let betas = if count == 1 {
            vec![beta_for_point(plant, points[0])]
        } else {
            let h = points[1] - points[0];
            points
                .iter()
                .map(|&p| max_deviation(plant, p, (p - h).max(plant.gamma.0), (p + h).min(plant.gamma.1)))
                .collect()
        };
        Self::new(plant, points, betas)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// All corner values.
    pub fn corner_set(&self) -> Vec<f64> {
        self.corners.iter().flat_map(|&(a, b)| [a, b]).collect()
    }
}

fn uniform(gamma: (f64, f64), m: usize) -> Vec<f64> {
    if m == 1 {
        return vec![0.5 * (gamma.0 + gamma.1)];
    }
    (0..m)
        .map(|k| {
            if k == m - 1 {
                gamma.1
            } else {
                gamma.0 + (gamma.1 - gamma.0) * k as f64 / (m - 1) as f64
            }
        })
        .collect()
}

fn harmonic(a: f64, b: f64, gamma: f64) -> f64 {
    1.0 / (gamma / a + (1.0 - gamma) / b)
}

/// Convex combination of two solutions: `Y` linearly, multipliers
/// harmonically. The result is in reduced form (no `pi`). `margin` is the
/// same convex combination of the endpoint margins and is not a
/// certificate.
pub fn interpolate_solution(a: &LmiSolution, b: &LmiSolution, gamma: f64) -> Result<LmiSolution> {
    let (ma, mb) = (&a.multipliers, &b.multipliers);
    if !ma.nu.keys().eq(mb.nu.keys())
        || !ma.mu.keys().eq(mb.mu.keys())
        || !ma.nu_i0.keys().eq(mb.nu_i0.keys())
        || !ma.mu_0i.keys().eq(mb.mu_0i.keys())
    {
        return Err(Error::KeyMismatch("the two solutions have different multiplier index sets".into()));
    }
    if a.y.shape() != b.y.shape() {
        return Err(Error::ShapeMismatch("the two solutions have different Y sizes".into()));
    }
    if !(0.0..=1.0).contains(&gamma) {
        return Err(Error::Validation(format!("gamma = {gamma} outside [0, 1]")));
    }
    let reduced = |s: &LmiSolution| LmiSolution {
        multipliers: s.multipliers.reduced(),
        ..s.clone()
    };
    if gamma == 1.0 {
        return Ok(reduced(a));
    }
    if gamma == 0.0 {
        return Ok(reduced(b));
    }
    let mix2 = |x: &std::collections::BTreeMap<(usize, usize), f64>, y: &std::collections::BTreeMap<(usize, usize), f64>| {
        x.iter().map(|(k, &v)| (*k, harmonic(v, y[k], gamma))).collect()
    };
    let mix1 = |x: &std::collections::BTreeMap<usize, f64>, y: &std::collections::BTreeMap<usize, f64>| {
        x.iter().map(|(k, &v)| (*k, harmonic(v, y[k], gamma))).collect()
    };
    Ok(LmiSolution {
        rho_s: gamma * a.rho_s + (1.0 - gamma) * b.rho_s,
        y: &a.y * gamma + &b.y * (1.0 - gamma),
        multipliers: MultiplierSet {
            nu: mix2(&ma.nu, &mb.nu),
            mu: mix2(&ma.mu, &mb.mu),
            pi: None,
            nu_i0: mix1(&ma.nu_i0, &mb.nu_i0),
            mu_0i: mix1(&ma.mu_0i, &mb.mu_0i),
        },
        margin: gamma * a.margin + (1.0 - gamma) * b.margin,
        beta_s: gamma * a.beta_s + (1.0 - gamma) * b.beta_s,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Continuous piecewise-linear `Y` through the interpolation bands.
    Interpolated,
    /// `Y` of the nearest design point (ties go to the lower one).
    Switching,
}

impl std::str::FromStr for ScheduleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "interpolated" => Ok(Self::Interpolated),
            "switching" => Ok(Self::Switching),
            other => Err(Error::Validation(format!("unknown schedule mode '{other}'"))),
        }
    }
}

/// Rate check `sup |rho'| * varrho / eta < 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub eta: f64,
    /// `sup |d Y_rho^{-1} / d rho|`.
    pub varrho: f64,
    /// The same supremum taken with respect to `gamma` instead of `rho`.
    pub varrho_gamma: f64,
    pub rho_dot_sup: f64,
    pub q: f64,
    pub satisfied: bool,
}

/// Gains for every follower as a function of `rho`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainSchedule {
    pub grid: DesignGrid,
    pub solutions: Vec<LmiSolution>,
    pub mode: ScheduleMode,
    pub constants: ConsensusConstants,
    #[serde(with = "crate::serde_mat::matrix")]
    pub b1: DMatrix<f64>,
    #[serde(with = "crate::serde_mat::matrix")]
    pub r_inv: DMatrix<f64>,
}

impl GainSchedule {
    pub fn new(grid: DesignGrid, solutions: Vec<LmiSolution>, mode: ScheduleMode, ctx: &LmiContext) -> Result<Self> {
        let s = Self {
            grid,
            solutions,
            mode,
            constants: ctx.constants.clone(),
            b1: ctx.plant.b1.clone(),
            r_inv: ctx.r_inv.clone(),
        };
        s.check()?;
        Ok(s)
    }

    fn check(&self) -> Result<()> {
        if self.solutions.len() != self.grid.len() {
            return Err(Error::Validation(format!(
                "{} solutions for {} design points",
                self.solutions.len(),
                self.grid.len()
            )));
        }
        let n = self.b1.nrows();
        for (sol, &p) in self.solutions.iter().zip(&self.grid.points) {
            if (sol.rho_s - p).abs() > 1e-12 * (1.0 + p.abs()) {
                return Err(Error::Validation(format!("solution for {} stored at design point {p}", sol.rho_s)));
            }
            if sol.y.shape() != (n, n) {
                return Err(Error::ShapeMismatch(format!("Y at {p} is {:?}", sol.y.shape())));
            }
            spd_inverse(&sol.y).map_err(|_| Error::Validation(format!("Y at {p} is not positive definite")))?;
        }
        Ok(())
    }

    pub fn with_mode(&self, mode: ScheduleMode) -> Self {
        Self { mode, ..self.clone() }
    }

    /// Index of the design point used in switching mode.
    pub fn nearest_point(&self, rho: f64) -> usize {
        let mut best = 0;
        for (k, &p) in self.grid.points.iter().enumerate() {
            if (rho - p).abs() < (rho - self.grid.points[best]).abs() {
                best = k;
            }
        }
        best
    }

    fn check_range(&self, rho: f64) -> Result<f64> {
        let (lo, hi) = self.grid.gamma;
        if !(rho >= lo - RANGE_SLACK && rho <= hi + RANGE_SLACK) {
            return Err(Error::OutOfRange { rho, lo, hi });
        }
        Ok(rho.clamp(lo, hi))
    }

    /// Segment `s` and band parameter `gamma` in `[0, 1]` if `rho` falls in
    /// the band between points `s` and `s + 1`.
    pub fn band(&self, rho: f64) -> Option<(usize, f64)> {
        self.grid.corners.iter().enumerate().find_map(|(s, &(lo, hi))| {
            (rho >= lo && rho <= hi).then(|| (s, ((hi - rho) / (hi - lo)).clamp(0.0, 1.0)))
        })
    }

    /// `Y` on the continuous schedule, whatever the mode.
    pub fn y_interpolated(&self, rho: f64) -> Result<DMatrix<f64>> {
        let rho = self.check_range(rho)?;
        if let Some((s, g)) = self.band(rho) {
            return Ok(&self.solutions[s].y * g + &self.solutions[s + 1].y * (1.0 - g));
        }
        // outside every band: the design point on the same side of the band
        let pts = &self.grid.points;
        let mut k = 0;
        for (s, &(_, hi)) in self.grid.corners.iter().enumerate() {
            if rho > hi {
                k = s + 1;
            }
        }
        debug_assert!(k < pts.len());
        Ok(self.solutions[k].y.clone())
    }

    /// `Y_rho` according to the schedule mode.
    pub fn y_of_rho(&self, rho: f64) -> Result<DMatrix<f64>> {
        match self.mode {
            ScheduleMode::Interpolated => self.y_interpolated(rho),
            ScheduleMode::Switching => {
                let rho = self.check_range(rho)?;
                Ok(self.solutions[self.nearest_point(rho)].y.clone())
            }
        }
    }

    /// `R^{-1} B1' Y_rho^{-1}`; follower gains are `-(theta_i sigma)^{-1}`
    /// times this.
    pub fn base_gain(&self, rho: f64) -> Result<DMatrix<f64>> {
        let y = self.y_of_rho(rho)?;
        let chol = y
            .cholesky()
            .ok_or_else(|| Error::NumericalBreakdown(format!("Y at rho = {rho} is not positive definite")))?;
        // Y^{-1} B1, then transpose (Y symmetric)
        Ok(&self.r_inv * chol.solve(&self.b1).transpose())
    }

    pub fn follower_scale(&self, i: usize) -> Result<f64> {
        if i == 0 || i > self.constants.theta.len() {
            return Err(Error::UnknownNode(i));
        }
        Ok(-1.0 / (self.constants.theta[i - 1] * self.constants.sigma))
    }

    /// `K_i(rho) = -(theta_i sigma)^{-1} R^{-1} B1' Y_rho^{-1}`.
    pub fn gain(&self, rho: f64, i: usize) -> Result<DMatrix<f64>> {
        let scale = self.follower_scale(i)?;
        Ok(self.base_gain(rho)? * scale)
    }

    /// Rate constants on the interpolated schedule, with the default grid
    /// sizes (1001 points for `eta`, 101 per band for `varrho`).
    pub fn rate_condition(&self, rho_dot_sup: f64) -> Result<RateReport> {
        self.rate_condition_with(rho_dot_sup, 1001, 101)
    }

    pub fn rate_condition_with(&self, rho_dot_sup: f64, eta_points: usize, gamma_points: usize) -> Result<RateReport> {
        let (lo, hi) = self.grid.gamma;
        let control = &self.b1 * &self.r_inv * self.b1.transpose();
        let q_bar = &self.constants.q_bar;
        let eta_at = |k: usize| -> Result<f64> {
            let rho = if eta_points <= 1 {
                lo
            } else {
                lo + (hi - lo) * k as f64 / (eta_points - 1) as f64
            };
            let yi = spd_inverse(&self.y_interpolated(rho)?)?;
            lambda_min(&(&yi * &control * &yi + q_bar))
        };
        let mut eta = f64::INFINITY;
        for v in crate::par::map_range(eta_points.max(1), eta_at) {
            eta = eta.min(v?);
        }

        let segs: Vec<usize> = (0..self.grid.corners.len()).collect();
        let per_seg = crate::par::map(&segs, |&s| -> Result<(f64, f64)> {
            let (ya, yb) = (&self.solutions[s].y, &self.solutions[s + 1].y);
            let diff = ya - yb;
            let f = |g: f64| -> Result<f64> {
                let yi = spd_inverse(&(ya * g + yb * (1.0 - g)))?;
                Ok(spectral_norm(&(&yi * &diff * &yi)))
            };
            let m = gamma_points.max(2);
            let mut best = (f64::NEG_INFINITY, 0usize);
            for k in 0..m {
                let v = f(k as f64 / (m - 1) as f64)?;
                if v > best.0 {
                    best = (v, k);
                }
            }
            let h = 1.0 / (m - 1) as f64;
            let (mut a, mut b) = ((best.1 as f64 - 1.0) * h, (best.1 as f64 + 1.0) * h);
            a = a.max(0.0);
            b = b.min(1.0);
            let mut top = best.0;
            let phi = 0.5 * (5f64.sqrt() - 1.0);
            let (mut c, mut d) = (b - phi * (b - a), a + phi * (b - a));
            let (mut fc, mut fd) = (f(c)?, f(d)?);
            while b - a > GOLDEN_TOL {
                if fc > fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - phi * (b - a);
                    fc = f(c)?;
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + phi * (b - a);
                    fd = f(d)?;
                }
                top = top.max(fc).max(fd);
            }
            let (clo, chi) = self.grid.corners[s];
            Ok((top, top / (chi - clo)))
        });
        let mut varrho = 0.0f64;
        let mut varrho_gamma = 0.0f64;
        for r in per_seg {
            let (g, v) = r?;
            varrho_gamma = varrho_gamma.max(g);
            varrho = varrho.max(v);
        }
        let q = rho_dot_sup * varrho / eta;
        Ok(RateReport {
            eta,
            varrho,
            varrho_gamma,
            rho_dot_sup,
            q,
            satisfied: q < 1.0,
        })
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes") + "\n"
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let s: Self = serde_json::from_str(text).map_err(parse_error)?;
        s.check()?;
        Ok(s)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json_string())?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json_str(&std::fs::read_to_string(path)?)
    }

    /// Check that this schedule was built for `ctx`'s plant and network.
    pub fn check_compatible(&self, ctx: &LmiContext) -> Result<()> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs().max(b.abs()));
        let ok = self.b1 == ctx.plant.b1
            && self.constants.theta.len() == ctx.constants.theta.len()
            && self.constants.theta.iter().zip(ctx.constants.theta.iter()).all(|(a, b)| close(*a, *b))
            && close(self.constants.sigma, ctx.constants.sigma)
            && self.grid.gamma == ctx.plant.gamma;
        if !ok {
            return Err(Error::Validation("schedule was built for a different plant or network".into()));
        }
        Ok(())
    }
}
