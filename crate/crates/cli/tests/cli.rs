use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_gainsched"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn example(dir: &Path) -> PathBuf {
    let path = dir.join("mass_spring_21.json");
    let o = run(&["example", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    path
}

fn edit_scenario(src: &Path, dst: &Path, f: impl FnOnce(&mut Value)) -> PathBuf {
    let mut v: Value = serde_json::from_str(&std::fs::read_to_string(src).unwrap()).unwrap();
    f(&mut v);
    std::fs::write(dst, serde_json::to_string(&v).unwrap()).unwrap();
    dst.to_path_buf()
}

fn synthesize_reference_grid(scenario: &Path, out: &Path) -> Output {
    run(&[
        "synthesize",
        "--scenario",
        scenario.to_str().unwrap(),
        "--grid=-1,-0.3333333333333333,0.3333333333333333,1",
        "--betas",
        "0.3111",
        "--out",
        out.to_str().unwrap(),
    ])
}

#[test]
fn validate_example_prints_constants() {
    let dir = TempDir::new().unwrap();
    let scenario = example(dir.path());
    let o = run(&["validate", "--scenario", scenario.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert!(text.contains("sigma = 0.027313"), "{text}");
    assert!(text.contains("lambda_hat = 1.316"), "{text}");
    assert!(text.contains("theta = [1, 2, 3, 4, 5, 6, 7, 4,"), "{text}");
}

#[test]
fn unpinned_network_is_a_domain_failure() {
    let dir = TempDir::new().unwrap();
    let scenario = example(dir.path());
    let bad = edit_scenario(&scenario, &dir.path().join("unpinned.json"), |v| {
        let pins = v["topology"]["pinned"].as_array_mut().unwrap();
        for p in pins.iter_mut() {
            *p = Value::from(0);
        }
    });
    let o = run(&["validate", "--scenario", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("FAIL"), "{}", stderr(&o));
}

#[test]
fn malformed_json_is_a_parse_failure() {
    let dir = TempDir::new().unwrap();
    let path = dir.path().join("broken.json");
    std::fs::write(&path, "{\n  \"plant\": {\n    \"n\": 2,,\n").unwrap();
    let o = run(&["validate", "--scenario", path.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("line 3"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_failure() {
    let o = run(&["validate", "--scenaro", "x.json"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn reference_grid_pipeline() {
    let dir = TempDir::new().unwrap();
    let scenario = example(dir.path());
    let out = dir.path().join("run");
    let o = synthesize_reference_grid(&scenario, &out);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let text = stdout(&o);
    assert_eq!(text.matches("Feasible").count(), 4, "{text}");
    let schedule = out.join("schedule.json");
    assert!(schedule.exists());

    let o = run(&[
        "rate-check",
        "--scenario",
        scenario.to_str().unwrap(),
        "--schedule",
        schedule.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("rate condition: PASS"));

    let sim_args = |out: &Path| {
        vec![
            "simulate".to_string(),
            "--scenario".into(),
            scenario.to_str().unwrap().into(),
            "--schedule".into(),
            schedule.to_str().unwrap().into(),
            "--mode".into(),
            "both".into(),
            "--horizon".into(),
            "2".into(),
            "--out".into(),
            out.to_str().unwrap().into(),
        ]
    };
    let first = dir.path().join("sim_a");
    let o = bin().args(sim_args(&first)).output().unwrap();
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    for f in [
        "comparison.json",
        "interpolated/trajectory.csv",
        "interpolated/cost_report.json",
        "interpolated/tracking_errors.csv",
        "interpolated/states.csv",
        "interpolated/distances.csv",
        "interpolated/controls.csv",
        "interpolated/accelerations.csv",
        "switching/trajectory.csv",
    ] {
        assert!(first.join(f).exists(), "missing {f}");
    }
    let cmp: Value = serde_json::from_str(&std::fs::read_to_string(first.join("comparison.json")).unwrap()).unwrap();
    assert!(cmp["J_interp"].as_f64().unwrap() > 0.0);
    assert!(cmp["J_switch"].as_f64().unwrap() > 0.0);
    let report: Value =
        serde_json::from_str(&std::fs::read_to_string(first.join("interpolated/cost_report.json")).unwrap()).unwrap();
    assert_eq!(report["horizon_T"].as_f64(), Some(2.0));
    assert!(report["J"].as_f64().unwrap() <= report["bound_scheduled"].as_f64().unwrap());

    // reruns are byte-identical
    let second = dir.path().join("sim_b");
    let o = bin().args(sim_args(&second)).output().unwrap();
    assert_eq!(o.status.code(), Some(0));
    for f in ["comparison.json", "interpolated/trajectory.csv", "switching/controls.csv"] {
        assert_eq!(std::fs::read(first.join(f)).unwrap(), std::fs::read(second.join(f)).unwrap(), "{f} differs");
    }
}

#[test]
fn missing_schedule_is_a_usage_failure() {
    let dir = TempDir::new().unwrap();
    let scenario = example(dir.path());
    let o = run(&[
        "simulate",
        "--scenario",
        scenario.to_str().unwrap(),
        "--schedule",
        dir.path().join("nope.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn small_beta_reports_no_overlap() {
    let dir = TempDir::new().unwrap();
    let scenario = example(dir.path());
    let o = run(&[
        "synthesize",
        "--scenario",
        scenario.to_str().unwrap(),
        "--grid=-1,-0.3333333333333333,0.3333333333333333,1",
        "--betas",
        "0.1",
        "--out",
        dir.path().join("run").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("do not overlap"), "{}", stderr(&o));
}

#[test]
fn auto_grid_on_constant_plant_uses_one_point() {
    let dir = TempDir::new().unwrap();
    let scenario = example(dir.path());
    let constant = edit_scenario(&scenario, &dir.path().join("constant.json"), |v| {
        v["plant"]["A_coeffs"].as_array_mut().unwrap().truncate(1);
        v["rho_profile"] = serde_json::json!({"kind": "constant", "params": {"value": 0.0}});
    });
    let out = dir.path().join("run");
    let o = run(&[
        "synthesize",
        "--scenario",
        constant.to_str().unwrap(),
        "--grid",
        "auto",
        "--betas",
        "0",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert_eq!(stdout(&o).matches("Feasible").count(), 1);
    let o = run(&[
        "rate-check",
        "--scenario",
        constant.to_str().unwrap(),
        "--schedule",
        out.join("schedule.json").to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("q = 0.000000"), "{}", stdout(&o));
}
