use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use gainsched::plant::build_mass_spring_example;
use gainsched::sim::{self, CostReport};
use gainsched::synthesis::{synthesize, Objective, SynthesisOptions};
use gainsched::{DesignGrid, Error, GainSchedule, LmiContext, Scenario, ScheduleMode, UncertaintyRealization};

/// Gain-scheduled leader-follower tracking: synthesis, rate checks and
/// closed-loop simulation.
#[derive(Parser)]
#[command(name = "gainsched", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check a scenario file and print the graph constants.
    Validate {
        #[arg(long)]
        scenario: PathBuf,
    },
    /// Solve the design-point LMIs and write a schedule.
    Synthesize(SynthArgs),
    /// Print the rate condition of a schedule for the scenario's parameter profile.
    RateCheck {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        schedule: PathBuf,
    },
    /// Simulate the closed loop and write trajectories, cost reports and figure tables.
    Simulate(SimArgs),
    /// Write the built-in 20-follower mass-spring scenario.
    Example {
        #[arg(long, default_value = "mass_spring_21.json")]
        out: PathBuf,
    },
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    scenario: PathBuf,
    /// Comma-separated design points, `auto` (needs a single --betas value)
    /// or `auto:COUNT`.
    #[arg(long, allow_hyphen_values = true, default_value = "auto:4")]
    grid: String,
    /// One beta for every point, or one per point.
    #[arg(long, allow_hyphen_values = true)]
    betas: Option<String>,
    #[arg(long, value_enum, default_value_t = ModeArg::Interpolated)]
    mode: ModeArg,
    #[arg(long, value_enum, default_value_t = ObjectiveArg::TraceInverse)]
    objective: ObjectiveArg,
    /// Bound on `Y_s - Y_{s+1}` between neighboring points; `none` solves
    /// the points independently.
    #[arg(long, default_value = "0.6")]
    proximity: String,
    /// Output directory; the schedule goes to `schedule.json`.
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct SimArgs {
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    schedule: PathBuf,
    #[arg(long, value_enum, default_value_t = SimMode::Interpolated)]
    mode: SimMode,
    /// `nominal`, `zero`, `sweep` or `random`.
    #[arg(long, default_value = "nominal")]
    uncertainty: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    horizon: Option<f64>,
    /// Headway added to the relative distances.
    #[arg(long, default_value_t = 1.0)]
    headway: f64,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Interpolated,
    Switching,
}

#[derive(Clone, Copy, PartialEq, ValueEnum)]
enum SimMode {
    Interpolated,
    Switching,
    Both,
}

#[derive(Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    Feasibility,
    TraceInverse,
}

impl From<ModeArg> for ScheduleMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Interpolated => ScheduleMode::Interpolated,
            ModeArg::Switching => ScheduleMode::Switching,
        }
    }
}

/// Exit 1 for domain failures, 2 for anything wrong with the inputs.
enum Failure {
    Domain(String),
    Usage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } | Error::Io(_) | Error::Json(_) => Failure::Usage(e.to_string()),
            other => Failure::Domain(other.to_string()),
        }
    }
}

type CmdResult = Result<(), Failure>;

fn usage(msg: impl Into<String>) -> Failure {
    Failure::Usage(msg.into())
}

fn read_scenario(path: &Path) -> Result<Scenario, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(Scenario::from_json_str(&text)?)
}

fn read_schedule(path: &Path) -> Result<GainSchedule, Failure> {
    let text = std::fs::read_to_string(path).map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
    Ok(GainSchedule::from_json_str(&text)?)
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>, Failure> {
    text.split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| usage(format!("bad {what} value '{s}'"))))
        .collect()
}

fn create_dir(dir: &Path) -> CmdResult {
    std::fs::create_dir_all(dir).map_err(|e| usage(format!("cannot create {}: {e}", dir.display())))
}

fn write_file(path: &Path, body: &str) -> CmdResult {
    std::fs::write(path, body).map_err(|e| usage(format!("cannot write {}: {e}", path.display())))
}

fn validate(scenario: &Path) -> CmdResult {
    let s = read_scenario(scenario)?;
    let report = s.topology.validate();
    print!("{report}");
    let c = s.topology.consensus_constants(&s.q)?;
    println!("sigma = {:.6}", c.sigma);
    println!("lambda_hat = {:.6}", c.lambda_hat);
    let theta: Vec<String> = c.theta.iter().map(|v| format!("{v}")).collect();
    println!("theta = [{}]", theta.join(", "));
    println!("scenario: PASS");
    Ok(())
}

fn build_grid(s: &Scenario, grid: &str, betas: Option<&str>) -> Result<DesignGrid, Failure> {
    let betas = betas.map(|b| parse_list(b, "beta")).transpose()?;
    let grid = if let Some(count) = grid.strip_prefix("auto:") {
        if betas.is_some() {
            return Err(usage("--betas cannot be combined with --grid auto:COUNT"));
        }
        let count: usize = count.parse().map_err(|_| usage(format!("bad grid count '{count}'")))?;
        DesignGrid::auto_with_count(&s.plant, count)?
    } else if grid == "auto" {
        match betas.as_deref() {
            Some([b]) => DesignGrid::auto_with_beta(&s.plant, *b)?,
            _ => return Err(usage("--grid auto needs exactly one --betas value")),
        }
    } else {
        let points = parse_list(grid, "grid")?;
        let betas = match betas {
            None => return Err(usage("an explicit --grid needs --betas")),
            Some(b) if b.len() == 1 => vec![b[0]; points.len()],
            Some(b) => b,
        };
        DesignGrid::new(&s.plant, points, betas)?
    };
    Ok(grid)
}

fn run_synthesize(a: &SynthArgs) -> CmdResult {
    let s = read_scenario(&a.scenario)?;
    let grid = build_grid(&s, &a.grid, a.betas.as_deref())?;
    let ctx = LmiContext::from_scenario(&s)?;
    let proximity = match a.proximity.as_str() {
        "none" => None,
        v => Some(v.parse::<f64>().map_err(|_| usage(format!("bad proximity '{v}'")))?),
    };
    let opts = SynthesisOptions {
        objective: match a.objective {
            ObjectiveArg::Feasibility => Objective::Feasibility,
            ObjectiveArg::TraceInverse => Objective::TraceInverse,
        },
        proximity,
        ..Default::default()
    };
    let outcome = synthesize(&ctx, &grid.points, &grid.betas, &opts)?;
    for r in &outcome.reports {
        println!(
            "rho = {:+.6}  beta = {:.6}  {:?}  margin = {:.3e} (required {:.3e})  iterations = {}  [{}]",
            r.rho_s, r.beta_s, r.status, r.margin, r.required_margin, r.iterations, r.method
        );
    }
    if !outcome.all_feasible() {
        return Err(Failure::Domain("some design points are infeasible; no schedule written".into()));
    }
    let solutions = outcome.into_solutions()?;
    let schedule = GainSchedule::new(grid, solutions, a.mode.into(), &ctx)?;
    for (s_idx, (lo, hi)) in schedule.grid.corners.iter().enumerate() {
        println!("band {}: [{lo:.6}, {hi:.6}]", s_idx + 1);
    }
    create_dir(&a.out)?;
    let path = a.out.join("schedule.json");
    write_file(&path, &schedule.to_json_string())?;
    println!("wrote {}", path.display());
    Ok(())
}

fn run_rate_check(scenario: &Path, schedule: &Path) -> CmdResult {
    let s = read_scenario(scenario)?;
    let sched = read_schedule(schedule)?;
    sched.check_compatible(&LmiContext::from_scenario(&s)?)?;
    let r = sim::rate_report(&s, &sched)?;
    println!("eta = {:.6e}", r.eta);
    println!("varrho = {:.6e}", r.varrho);
    println!("rho_dot_sup = {:.6e}", r.rho_dot_sup);
    println!("q = {:.6}", r.q);
    if r.satisfied {
        println!("rate condition: PASS");
        Ok(())
    } else {
        println!("rate condition: FAIL");
        Err(Failure::Domain(format!("q = {} >= 1", r.q)))
    }
}

#[derive(Serialize)]
struct Comparison {
    #[serde(rename = "J_interp")]
    j_interp: f64,
    #[serde(rename = "J_switch")]
    j_switch: f64,
    relative_difference: f64,
}

fn simulate_mode(
    s: &Scenario,
    schedule: &GainSchedule,
    set: &[UncertaintyRealization],
    headway: f64,
    dir: &Path,
) -> Result<(CostReport, bool), Failure> {
    create_dir(dir)?;
    let traj = sim::simulate(s, schedule, &set[0])?;
    let report = sim::cost_report(s, schedule, &traj)?;
    traj.write_csv(dir.join("trajectory.csv"))?;
    write_file(&dir.join("cost_report.json"), &report.to_json_string())?;
    sim::write_figures(&traj, headway, dir, "")?;
    let mut holds = report.bound_holds();
    println!(
        "{:?} [{}]: J = {:.6}  bound = {}  q = {:.4}",
        schedule.mode,
        set[0].name,
        report.j,
        report.bound_scheduled.map_or("none (q >= 1)".to_string(), |b| format!("{b:.6}")),
        report.rate.q
    );
    if set.len() > 1 {
        let sweep = sim::uncertainty_sweep(s, schedule, set)?;
        for run in &sweep.runs {
            println!("  {:<12} J = {:.6}", run.name, run.j);
        }
        println!(
            "  worst: {} (J = {:.6}), bound holds: {}",
            sweep.runs[sweep.worst].name, sweep.report.j, sweep.bound_holds
        );
        write_file(&dir.join("sweep.json"), &sweep.to_json_string())?;
        holds &= sweep.bound_holds;
    }
    Ok((report, holds))
}

fn run_simulate(a: &SimArgs) -> CmdResult {
    let mut s = read_scenario(&a.scenario)?;
    if let Some(dt) = a.dt {
        s.dt = dt;
    }
    if let Some(t) = a.horizon {
        s.horizon = t;
    }
    if a.dt.is_some() || a.horizon.is_some() {
        s.validate()?;
    }
    let schedule = read_schedule(&a.schedule)?;
    schedule.check_compatible(&LmiContext::from_scenario(&s)?)?;
    let set = UncertaintyRealization::named_set(&a.uncertainty, a.seed, &s).map_err(|e| usage(e.to_string()))?;
    let modes: &[ScheduleMode] = match a.mode {
        SimMode::Interpolated => &[ScheduleMode::Interpolated],
        SimMode::Switching => &[ScheduleMode::Switching],
        SimMode::Both => &[ScheduleMode::Interpolated, ScheduleMode::Switching],
    };
    let mut results = Vec::new();
    for &mode in modes {
        let dir = a.out.join(match mode {
            ScheduleMode::Interpolated => "interpolated",
            ScheduleMode::Switching => "switching",
        });
        results.push(simulate_mode(&s, &schedule.with_mode(mode), &set, a.headway, &dir)?);
    }
    if a.mode == SimMode::Both {
        let (ji, js) = (results[0].0.j, results[1].0.j);
        let cmp = Comparison {
            j_interp: ji,
            j_switch: js,
            relative_difference: (js - ji) / ji,
        };
        let body = serde_json::to_string_pretty(&cmp).expect("comparison serializes") + "\n";
        write_file(&a.out.join("comparison.json"), &body)?;
        println!("J_interp = {ji:.6}, J_switch = {js:.6}");
    }
    if results.iter().all(|r| r.1) {
        Ok(())
    } else {
        Err(Failure::Domain("simulated cost exceeds the guaranteed bound (or q >= 1)".into()))
    }
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Validate { scenario } => validate(&scenario),
        Command::Synthesize(a) => run_synthesize(&a),
        Command::RateCheck { scenario, schedule } => run_rate_check(&scenario, &schedule),
        Command::Simulate(a) => run_simulate(&a),
        Command::Example { out } => {
            if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
                create_dir(dir)?;
            }
            write_file(&out, &build_mass_spring_example().to_json_string())?;
            println!("wrote {}", out.display());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Domain(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
