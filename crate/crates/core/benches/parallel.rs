//! Sequential vs data-parallel runs of the two heavy loops: the uncertainty
//! sweep and design point synthesis.
//!
//! "sequential" pins rayon to one worker; "parallel" uses the global pool.
//! Without the `parallel` feature both arms run the plain iterator path.

use std::hint::black_box;
use std::time::Duration;

use criterion::{criterion_group, criterion_main, Criterion};
use gainsched::lmi::LmiContext;
use gainsched::plant::{build_mass_spring_example, UncertaintyRealization};
use gainsched::schedule::{DesignGrid, GainSchedule, ScheduleMode};
use gainsched::sim::uncertainty_sweep;
use gainsched::synthesis::{synthesize, Objective, SynthesisOptions};

const POINTS: [f64; 4] = [-1.0, -1.0 / 3.0, 1.0 / 3.0, 1.0];
const BETAS: [f64; 4] = [0.3111; 4];

fn pools() -> [(&'static str, rayon::ThreadPool); 2] {
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let all = rayon::ThreadPoolBuilder::new().build().unwrap();
    [("sequential", one), ("parallel", all)]
}

fn sweep(c: &mut Criterion) {
    let mut scenario = build_mass_spring_example();
    scenario.horizon = 1.0;
    let ctx = LmiContext::from_scenario(&scenario).unwrap();
    let opts = SynthesisOptions {
        objective: Objective::TraceInverse,
        proximity: Some(0.6),
        ..Default::default()
    };
    let solutions = synthesize(&ctx, &POINTS, &BETAS, &opts)
        .unwrap()
        .into_solutions()
        .unwrap();
    let grid = DesignGrid::new(&ctx.plant, POINTS.to_vec(), BETAS.to_vec()).unwrap();
    let schedule = GainSchedule::new(grid, solutions, ScheduleMode::Interpolated, &ctx).unwrap();
    let set = UncertaintyRealization::named_set("random", 1, &scenario).unwrap();
    let mut group = c.benchmark_group("uncertainty_sweep");
    group.sample_size(10);
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| uncertainty_sweep(black_box(&scenario), &schedule, &set).unwrap()))
        });
    }
    group.finish();
}

fn synthesis(c: &mut Criterion) {
    let scenario = build_mass_spring_example();
    let ctx = LmiContext::from_scenario(&scenario).unwrap();
    let opts = SynthesisOptions::default();
    let mut group = c.benchmark_group("synthesis");
    group.sample_size(10).measurement_time(Duration::from_secs(30));
    for (name, pool) in pools() {
        group.bench_function(name, |b| {
            b.iter(|| pool.install(|| synthesize(black_box(&ctx), &POINTS, &BETAS, &opts).unwrap()))
        });
    }
    group.finish();
}

criterion_group!(benches, sweep, synthesis);
criterion_main!(benches);
