//! Closed-loop simulation, tracking cost and guaranteed cost bounds.
//!
//! States are integrated with fixed-step classical RK4. The scheduling
//! parameter, the gains and the uncertainty blocks are all evaluated at the
//! stage times. The running cost is carried as an extra RK4 state, so it is
//! nondecreasing by construction; [`evaluate_cost`] recomputes the same
//! integral from the samples with composite Simpson.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plant::{coupling_force, DeltaSpec, Scenario, UncertaintyRealization};
use crate::schedule::{GainSchedule, RateReport, ScheduleMode};
use crate::solver::eig::{lambda_max, spd_inverse};

/// Any state entry beyond this magnitude aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e12;

/// Sampled closed-loop run.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `states[i][k]` is `x_i(t_k)`; node 0 is the leader.
    pub states: Vec<Vec<DVector<f64>>>,
    /// `controls[i - 1][k]` is `u_i(t_k)`.
    pub controls: Vec<Vec<DVector<f64>>>,
    /// State derivatives at the samples, laid out like `states`.
    pub rates: Vec<Vec<DVector<f64>>>,
    pub rho: Vec<f64>,
    pub cost_running: Vec<f64>,
}

impl Trajectory {
    fn empty(nodes: usize) -> Self {
        Self {
            times: Vec::new(),
            states: vec![Vec::new(); nodes],
            controls: vec![Vec::new(); nodes.saturating_sub(1)],
            rates: vec![Vec::new(); nodes],
            rho: Vec::new(),
            cost_running: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn n_followers(&self) -> usize {
        self.controls.len()
    }

    pub fn final_state(&self, node: usize) -> Option<&DVector<f64>> {
        self.states.get(node).and_then(|s| s.last())
    }

    /// Wide CSV: time, rho, every state, every control, tracking error
    /// norms and the running cost.
    pub fn to_csv_string(&self) -> String {
        let errors = tracking_errors(self);
        let mut out = String::from("t,rho");
        for (i, xs) in self.states.iter().enumerate() {
            for c in 0..xs.first().map_or(0, |x| x.len()) {
                write!(out, ",x{i}_{}", c + 1).unwrap();
            }
        }
        for (i, us) in self.controls.iter().enumerate() {
            for c in 0..us.first().map_or(0, |u| u.len()) {
                write!(out, ",u{}_{}", i + 1, c + 1).unwrap();
            }
        }
        for i in 1..=self.n_followers() {
            write!(out, ",e{i}_norm").unwrap();
        }
        out.push_str(",cost\n");
        for k in 0..self.len() {
            push_num(&mut out, self.times[k], true);
            push_num(&mut out, self.rho[k], false);
            for xs in &self.states {
                for v in xs[k].iter() {
                    push_num(&mut out, *v, false);
                }
            }
            for us in &self.controls {
                for v in us[k].iter() {
                    push_num(&mut out, *v, false);
                }
            }
            for e in &errors {
                push_num(&mut out, e[k].norm(), false);
            }
            push_num(&mut out, self.cost_running[k], false);
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_csv_string())?;
        Ok(())
    }
}

fn push_num(out: &mut String, v: f64, first: bool) {
    if !first {
        out.push(',');
    }
    write!(out, "{v:.14e}").unwrap();
}

enum DeltaSource<'a> {
    Fixed(DMatrix<f64>),
    Timed(&'a DeltaSpec),
}

struct Edge<'a> {
    from: usize,
    c: &'a DMatrix<f64>,
    delta: DeltaSource<'a>,
}

struct Dynamics<'a> {
    scenario: &'a Scenario,
    schedule: Option<&'a GainSchedule>,
    nodes: usize,
    incoming: Vec<Vec<Edge<'a>>>,
    comm: Vec<Vec<usize>>,
    pinned: Vec<bool>,
    /// `1 / (theta_i sigma)`; the control is `scale_i R^{-1} B1' Y^{-1} * consensus_i`.
    scales: Vec<f64>,
}

struct StageOut {
    dx: Vec<DVector<f64>>,
    u: Vec<DVector<f64>>,
    cost_rate: f64,
}

impl<'a> Dynamics<'a> {
    fn new(
        scenario: &'a Scenario,
        schedule: Option<&'a GainSchedule>,
        uncertainty: &'a UncertaintyRealization,
        with_followers: bool,
    ) -> Result<Self> {
        let n_f = scenario.n_followers();
        let nodes = if with_followers { n_f + 1 } else { 1 };
        let m = scenario.plant.m;
        let mut incoming: Vec<Vec<Edge>> = (0..nodes).map(|_| Vec::new()).collect();
        for &(j, i) in &scenario.topology.coupling_edges {
            if j >= nodes || i >= nodes {
                continue;
            }
            let c = scenario.couplings.get(j, i)?;
            let spec = uncertainty.spec(j, i);
            spec.check_bound()?;
            let delta = match spec {
                DeltaSpec::Sinusoid { .. } => DeltaSource::Timed(spec),
                fixed => DeltaSource::Fixed(fixed.eval(0.0, m, c.nrows())?),
            };
            incoming[i].push(Edge { from: j, c, delta });
        }
        let mut comm = vec![Vec::new(); nodes];
        let mut pinned = vec![false; nodes];
        let mut scales = vec![0.0; nodes];
        if let Some(s) = schedule {
            if s.constants.theta.len() != n_f || s.b1.shape() != scenario.plant.b1.shape() {
                return Err(Error::ShapeMismatch(format!(
                    "schedule is for {} followers and B1 {:?}, scenario has {n_f} and {:?}",
                    s.constants.theta.len(),
                    s.b1.shape(),
                    scenario.plant.b1.shape()
                )));
            }
            for i in 1..nodes {
                comm[i] = scenario.topology.neighborhoods(i)?.s_c;
                pinned[i] = scenario.topology.pinned[i - 1];
                scales[i] = -s.follower_scale(i)?;
            }
        }
        Ok(Self {
            scenario,
            schedule,
            nodes,
            incoming,
            comm,
            pinned,
            scales,
        })
    }

    fn eval(&self, t: f64, xs: &[DVector<f64>]) -> Result<StageOut> {
        let plant = &self.scenario.plant;
        let rho = self.scenario.rho_profile.eval(t);
        let a = plant.eval_a(rho);
        let base = match self.schedule {
            Some(s) if self.nodes > 1 => Some(s.base_gain(rho)?),
            _ => None,
        };
        let mut dx = Vec::with_capacity(self.nodes);
        let mut u = Vec::with_capacity(self.nodes.saturating_sub(1));
        let mut cost_rate = 0.0;
        for i in 0..self.nodes {
            let mut force = DVector::zeros(plant.m);
            for e in &self.incoming[i] {
                let z = &xs[e.from] - &xs[i];
                let f = match &e.delta {
                    DeltaSource::Fixed(d) => coupling_force(d, e.c, &z)?,
                    DeltaSource::Timed(spec) => coupling_force(&spec.eval(t, plant.m, e.c.nrows())?, e.c, &z)?,
                };
                force += f;
            }
            let mut d = &a * &xs[i] + &plant.b2 * force;
            if i > 0 {
                let ui = match &base {
                    Some(k) => {
                        let mut consensus = DVector::zeros(plant.n);
                        for &j in &self.comm[i] {
                            consensus += &xs[j] - &xs[i];
                        }
                        if self.pinned[i] {
                            consensus += &xs[0] - &xs[i];
                        }
                        k * consensus * self.scales[i]
                    }
                    None => DVector::zeros(plant.p),
                };
                d += &plant.b1 * &ui;
                let e = &xs[0] - &xs[i];
                cost_rate += (e.transpose() * &self.scenario.q * &e)[(0, 0)] + (ui.transpose() * &self.scenario.r * &ui)[(0, 0)];
                u.push(ui);
            }
            dx.push(d);
        }
        Ok(StageOut { dx, u, cost_rate })
    }
}

fn axpy(xs: &[DVector<f64>], h: f64, ks: &[DVector<f64>]) -> Vec<DVector<f64>> {
    xs.iter().zip(ks).map(|(x, k)| x + k * h).collect()
}

fn diverged(xs: &[DVector<f64>]) -> bool {
    xs.iter().any(|x| x.iter().any(|v| !v.is_finite() || v.abs() > DIVERGENCE_LIMIT))
}

fn integrate(dynamics: &Dynamics) -> Result<Trajectory> {
    let scenario = dynamics.scenario;
    let steps = scenario.steps()?;
    let dt = scenario.dt;
    let mut traj = Trajectory::empty(dynamics.nodes);
    let mut xs: Vec<DVector<f64>> = scenario.x0[..dynamics.nodes].to_vec();
    let mut cost = 0.0;
    let record = |traj: &mut Trajectory, t: f64, xs: &[DVector<f64>], out: &StageOut, cost: f64| {
        traj.times.push(t);
        traj.rho.push(scenario.rho_profile.eval(t));
        traj.cost_running.push(cost);
        for (i, x) in xs.iter().enumerate() {
            traj.states[i].push(x.clone());
            traj.rates[i].push(out.dx[i].clone());
        }
        for (i, ui) in out.u.iter().enumerate() {
            traj.controls[i].push(ui.clone());
        }
    };
    for k in 0..steps {
        let t = k as f64 * dt;
        let k1 = dynamics.eval(t, &xs)?;
        record(&mut traj, t, &xs, &k1, cost);
        let k2 = dynamics.eval(t + 0.5 * dt, &axpy(&xs, 0.5 * dt, &k1.dx))?;
        let k3 = dynamics.eval(t + 0.5 * dt, &axpy(&xs, 0.5 * dt, &k2.dx))?;
        let k4 = dynamics.eval(t + dt, &axpy(&xs, dt, &k3.dx))?;
        for i in 0..xs.len() {
            let incr = (&k1.dx[i] + &k2.dx[i] * 2.0 + &k3.dx[i] * 2.0 + &k4.dx[i]) * (dt / 6.0);
            xs[i] += incr;
        }
        cost += dt / 6.0 * (k1.cost_rate + 2.0 * k2.cost_rate + 2.0 * k3.cost_rate + k4.cost_rate);
        if diverged(&xs) || !cost.is_finite() {
            return Err(Error::NonFinite {
                time: (k + 1) as f64 * dt,
                partial: Box::new(traj),
            });
        }
    }
    let t_end = steps as f64 * dt;
    let last = dynamics.eval(t_end, &xs)?;
    record(&mut traj, t_end, &xs, &last, cost);
    Ok(traj)
}

/// Closed loop under `schedule` with one uncertainty realization.
pub fn simulate(scenario: &Scenario, schedule: &GainSchedule, uncertainty: &UncertaintyRealization) -> Result<Trajectory> {
    integrate(&Dynamics::new(scenario, Some(schedule), uncertainty, true)?)
}

/// All followers present but every control input held at zero.
pub fn simulate_open_loop(scenario: &Scenario, uncertainty: &UncertaintyRealization) -> Result<Trajectory> {
    integrate(&Dynamics::new(scenario, None, uncertainty, true)?)
}

/// The leader alone, with no followers in the network.
pub fn simulate_leader(scenario: &Scenario, uncertainty: &UncertaintyRealization) -> Result<Trajectory> {
    integrate(&Dynamics::new(scenario, None, uncertainty, false)?)
}

/// `e_i(t_k) = x_0(t_k) - x_i(t_k)`, indexed `[i - 1][k]`.
pub fn tracking_errors(traj: &Trajectory) -> Vec<Vec<DVector<f64>>> {
    traj.states
        .iter()
        .skip(1)
        .map(|xi| traj.states[0].iter().zip(xi).map(|(x0, x)| x0 - x).collect())
        .collect()
}

/// Composite Simpson over the samples; the last interval falls back to the
/// trapezoid rule when the interval count is odd.
pub fn simpson(times: &[f64], values: &[f64]) -> f64 {
    let n = times.len().min(values.len());
    if n < 2 {
        return 0.0;
    }
    let intervals = n - 1;
    let even = intervals - intervals % 2;
    let mut total = 0.0;
    let mut k = 0;
    while k < even {
        let h = 0.5 * (times[k + 2] - times[k]);
        total += h / 3.0 * (values[k] + 4.0 * values[k + 1] + values[k + 2]);
        k += 2;
    }
    if even < intervals {
        total += 0.5 * (times[n - 1] - times[n - 2]) * (values[n - 2] + values[n - 1]);
    }
    total
}

/// Integrand `sum_i e_i' Q e_i + u_i' R u_i` at every sample.
pub fn cost_integrand(traj: &Trajectory, q: &DMatrix<f64>, r: &DMatrix<f64>) -> Vec<f64> {
    let errors = tracking_errors(traj);
    (0..traj.len())
        .map(|k| {
            let mut v = 0.0;
            for (e, u) in errors.iter().zip(&traj.controls) {
                v += (e[k].transpose() * q * &e[k])[(0, 0)] + (u[k].transpose() * r * &u[k])[(0, 0)];
            }
            v
        })
        .collect()
}

/// Tracking cost over the simulated horizon.
pub fn evaluate_cost(traj: &Trajectory, q: &DMatrix<f64>, r: &DMatrix<f64>) -> f64 {
    simpson(&traj.times, &cost_integrand(traj, q, r))
}

/// Rough size of the cost beyond the horizon: `|e(T)|^2 lambda_max(Q) / (2 decay)`
/// with `decay` the fitted exponential rate of `|e|` over the last quarter
/// of the run. `None` when the errors are not decaying there.
pub fn tail_estimate(traj: &Trajectory, q: &DMatrix<f64>) -> Option<f64> {
    let errors = tracking_errors(traj);
    let n = traj.len();
    if n < 8 || errors.is_empty() {
        return None;
    }
    let sq = |k: usize| errors.iter().map(|e| e[k].norm_squared()).sum::<f64>();
    let end = sq(n - 1);
    if end == 0.0 {
        return Some(0.0);
    }
    let start = n - n / 4;
    let (mut st, mut sy, mut stt, mut sty, mut cnt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in start..n {
        let v = sq(k);
        if !(v > 0.0) {
            continue;
        }
        let (t, y) = (traj.times[k], 0.5 * v.ln());
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
        cnt += 1.0;
    }
    let denom = cnt * stt - st * st;
    if cnt < 2.0 || denom <= 0.0 {
        return None;
    }
    let decay = -(cnt * sty - st * sy) / denom;
    if !(decay > 0.0) {
        return None;
    }
    let qmax = lambda_max(q).ok()?;
    Some(end * qmax / (2.0 * decay))
}

/// Largest sample-to-sample change of any control signal.
pub fn max_control_jump(traj: &Trajectory) -> f64 {
    traj.controls
        .iter()
        .flat_map(|u| u.windows(2).map(|w| (&w[1] - &w[0]).norm()))
        .fold(0.0, f64::max)
}

/// `alpha_i - alpha_{i-1} + headway` for `i = 1..=N`, indexed `[i - 1][k]`,
/// where `alpha` is the first state component.
pub fn relative_distances(traj: &Trajectory, headway: f64) -> Vec<Vec<f64>> {
    (1..traj.states.len())
        .map(|i| {
            traj.states[i]
                .iter()
                .zip(&traj.states[i - 1])
                .map(|(a, b)| a[0] - b[0] + headway)
                .collect()
        })
        .collect()
}

/// Guaranteed cost bounds for the initial errors in `x0`.
///
/// Returns the fixed-gain bound (only for a single design point) and the
/// scheduled bound `lambda_hat / ((1 - q) sigma^2) * sum_i e_i(0)' Y^{-1} e_i(0)`
/// with `Y` taken from the interpolated schedule at `rho0`.
pub fn performance_bounds(schedule: &GainSchedule, x0: &[DVector<f64>], rho0: f64, q: f64) -> Result<(Option<f64>, f64)> {
    if !(q < 1.0) {
        return Err(Error::RateViolated(q));
    }
    if x0.len() != schedule.constants.theta.len() + 1 {
        return Err(Error::ShapeMismatch(format!(
            "{} initial states for {} followers",
            x0.len(),
            schedule.constants.theta.len()
        )));
    }
    let c = &schedule.constants;
    let factor = c.lambda_hat / (c.sigma * c.sigma);
    let weighted = |y_inv: &DMatrix<f64>| -> f64 {
        x0[1..]
            .iter()
            .map(|xi| {
                let e = &x0[0] - xi;
                (e.transpose() * y_inv * &e)[(0, 0)]
            })
            .sum()
    };
    let fixed = if schedule.grid.len() == 1 {
        Some(factor * weighted(&spd_inverse(&schedule.solutions[0].y)?))
    } else {
        None
    };
    let y0 = schedule.y_interpolated(rho0)?;
    let scheduled = factor / (1.0 - q) * weighted(&spd_inverse(&y0)?);
    Ok((fixed, scheduled))
}

/// Cost of one run next to its theoretical bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    #[serde(rename = "J")]
    pub j: f64,
    pub bound_fixed: Option<f64>,
    /// `None` when the rate condition fails (`q >= 1`).
    pub bound_scheduled: Option<f64>,
    pub rate: RateReport,
    #[serde(rename = "horizon_T")]
    pub horizon_t: f64,
    pub tail_estimate: Option<f64>,
}

impl CostReport {
    pub fn bound_holds(&self) -> bool {
        self.bound_scheduled.is_some_and(|b| self.j <= b)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Rate condition of the interpolated version of `schedule` for the
/// scenario's parameter profile.
pub fn rate_report(scenario: &Scenario, schedule: &GainSchedule) -> Result<RateReport> {
    schedule
        .with_mode(ScheduleMode::Interpolated)
        .rate_condition(scenario.rho_profile.rate_sup())
}

pub fn cost_report(scenario: &Scenario, schedule: &GainSchedule, traj: &Trajectory) -> Result<CostReport> {
    let rate = rate_report(scenario, schedule)?;
    cost_report_with(scenario, schedule, traj, rate)
}

fn cost_report_with(scenario: &Scenario, schedule: &GainSchedule, traj: &Trajectory, rate: RateReport) -> Result<CostReport> {
    let rho0 = scenario.rho_profile.eval(0.0);
    let (bound_fixed, bound_scheduled) = match performance_bounds(schedule, &scenario.x0, rho0, rate.q) {
        Ok((f, s)) => (f, Some(s)),
        Err(Error::RateViolated(_)) => (None, None),
        Err(e) => return Err(e),
    };
    Ok(CostReport {
        j: evaluate_cost(traj, &scenario.q, &scenario.r),
        bound_fixed,
        bound_scheduled,
        rate,
        horizon_t: traj.times.last().copied().unwrap_or(0.0),
        tail_estimate: tail_estimate(traj, &scenario.q),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub name: String,
    #[serde(rename = "J")]
    pub j: f64,
}

/// Worst case over a set of uncertainty realizations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub runs: Vec<SweepRun>,
    /// Index into `runs` of the largest cost (first one on ties).
    pub worst: usize,
    /// Report of the worst run.
    pub report: CostReport,
    pub bound_holds: bool,
}

impl SweepReport {
    pub fn to_json_string(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

/// Simulate every realization (in parallel when enabled) and report the
/// worst cost against the scheduled bound.
pub fn uncertainty_sweep(
    scenario: &Scenario,
    schedule: &GainSchedule,
    realizations: &[UncertaintyRealization],
) -> Result<SweepReport> {
    if realizations.is_empty() {
        return Err(Error::Validation("uncertainty sweep needs at least one realization".into()));
    }
    for r in realizations {
        r.check_for(scenario)?;
    }
    let runs = crate::par::map(realizations, |r| -> Result<(f64, Trajectory)> {
        let traj = simulate(scenario, schedule, r)?;
        Ok((evaluate_cost(&traj, &scenario.q, &scenario.r), traj))
    });
    let runs: Vec<(f64, Trajectory)> = runs.into_iter().collect::<Result<_>>()?;
    let mut worst = 0;
    for (k, (j, _)) in runs.iter().enumerate() {
        if *j > runs[worst].0 {
            worst = k;
        }
    }
    let rate = rate_report(scenario, schedule)?;
    let report = cost_report_with(scenario, schedule, &runs[worst].1, rate)?;
    Ok(SweepReport {
        runs: realizations
            .iter()
            .zip(&runs)
            .map(|(r, (j, _))| SweepRun { name: r.name.clone(), j: *j })
            .collect(),
        worst,
        bound_holds: report.bound_holds(),
        report,
    })
}

fn table(times: &[f64], columns: &[(String, Vec<f64>)]) -> String {
    let mut out = String::from("t");
    for (name, _) in columns {
        out.push(',');
        out.push_str(name);
    }
    out.push('\n');
    for (k, t) in times.iter().enumerate() {
        push_num(&mut out, *t, true);
        for (_, col) in columns {
            push_num(&mut out, col[k], false);
        }
        out.push('\n');
    }
    out
}

fn component_columns(prefix: &str, first_index: usize, series: &[Vec<DVector<f64>>]) -> Vec<(String, Vec<f64>)> {
    let mut cols = Vec::new();
    for (i, s) in series.iter().enumerate() {
        for c in 0..s.first().map_or(0, |v| v.len()) {
            cols.push((format!("{prefix}{}_{}", i + first_index, c + 1), s.iter().map(|v| v[c]).collect()));
        }
    }
    cols
}

/// Per-figure CSV tables: tracking errors, states, relative distances,
/// controls and accelerations (the derivative of the second state
/// component, when there is one).
pub fn figure_tables(traj: &Trajectory, headway: f64) -> Vec<(&'static str, String)> {
    let mut out = vec![
        ("tracking_errors.csv", table(&traj.times, &component_columns("e", 1, &tracking_errors(traj)))),
        ("states.csv", table(&traj.times, &component_columns("x", 0, &traj.states))),
    ];
    let distances: Vec<(String, Vec<f64>)> = relative_distances(traj, headway)
        .into_iter()
        .enumerate()
        .map(|(i, d)| (format!("d{}", i + 1), d))
        .collect();
    out.push(("distances.csv", table(&traj.times, &distances)));
    out.push(("controls.csv", table(&traj.times, &component_columns("u", 1, &traj.controls))));
    if traj.rates.first().and_then(|r| r.first()).is_some_and(|v| v.len() >= 2) {
        let acc: Vec<(String, Vec<f64>)> = traj
            .rates
            .iter()
            .enumerate()
            .map(|(i, r)| (format!("a{i}"), r.iter().map(|v| v[1]).collect()))
            .collect();
        out.push(("accelerations.csv", table(&traj.times, &acc)));
    }
    out
}

/// Write [`figure_tables`] into `dir`, file names prefixed by `prefix`.
pub fn write_figures(traj: &Trajectory, headway: f64, dir: impl AsRef<Path>, prefix: &str) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (name, body) in figure_tables(traj, headway) {
        let path = dir.join(format!("{prefix}{name}"));
        std::fs::write(&path, body)?;
        written.push(path);
    }
    Ok(written)
}
