use std::fs;
use std::process::Command;

use mtl_asymptotics::SolverOptions;
use mtl_bench::compare::compare_formulations;
use mtl_bench::rho_curve::rho_curve;
use mtl_bench::spec::{parse_plan, Report, RunKind};
use mtl_bench::sweep::{header_comment, read_csv, run_sweep, RunOptions};
use mtl_bench::{preset, PRESETS};

const COLUMNS: &str =
    "axis,task,theory_err,sim_err_mean,sim_err_stderr,q_theory,r_theory,q_emp_mean,r_emp_mean,trials,status,wall_time_ms";

fn opts(dir: &std::path::Path) -> RunOptions {
    RunOptions { out_dir: dir.to_path_buf(), solver: SolverOptions::default(), plot: true }
}

fn base(extra: &str, grid: &str, axis: &str) -> String {
    format!(
        r#"
name = "t"
axis = "{axis}"
grid = {grid}
trials = 3
{extra}
[base]
num_tasks = 2
ambient_dim = 80
known_dim = 20
samples_per_task = [40, 40]
rho = 0.7
gamma1 = 0.1
gamma2 = 0.5
loss = "squared"
model = "linear_regression"
seed = 1
"#
    )
}

#[test]
fn empty_grid_is_rejected_before_writing() {
    assert!(parse_plan(&base("", "[]", "kappa")).is_err());
    let dir = tempfile::tempdir().unwrap();
    let mut spec = parse_plan(&base("", "[0.5]", "kappa")).unwrap().remove(0);
    spec.grid.clear();
    assert!(run_sweep(&spec, &opts(dir.path())).is_err());
    assert_eq!(fs::read_dir(dir.path()).unwrap().count(), 0);
}

#[test]
fn invalid_specs_are_rejected() {
    for (extra, grid, axis) in [
        ("", "[0.5, 0.4]", "kappa"),
        ("", "[0.5, 0.5]", "kappa"),
        ("trials = 0", "[0.5]", "kappa"),
        ("", "[1.5]", "T"),
        ("", "[0.5]", "R"),
        ("formulation = \"separate\"", "[0.5]", "kappa"),
        ("", "[3.0]", "kappa"),
        ("", "[1.2]", "rho"),
        ("kind = \"compare\"", "[2.0]", "kappa"),
        ("unknown = 1", "[0.5]", "kappa"),
    ] {
        assert!(parse_plan(&base(extra, grid, axis)).is_err(), "{extra} {grid} {axis}");
    }
    let unequal = base("", "[2.0]", "T").replace("[40, 40]", "[40, 20]");
    assert!(parse_plan(&unequal).is_err());
}

#[test]
fn csv_schema_and_row_contract() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parse_plan(&base("report = \"all\"\nlimit_row = true", "[0.25, 0.5]", "kappa")).unwrap().remove(0);
    let out = run_sweep(&spec, &opts(dir.path())).unwrap();
    let text = fs::read_to_string(&out.csv_path).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], header_comment());
    assert!(lines[0].starts_with("# mtl-asymptotics v") && lines[0].ends_with(" schema=1"));
    assert!(lines[1].starts_with("# sweep=t seed=1 "));
    assert_eq!(lines[2], COLUMNS);
    // two tasks per point plus the limit row
    assert_eq!(out.rows.len(), 5);
    for row in &out.rows[..4] {
        assert!(row.theory_err.is_some() && row.sim_err_stderr.is_some() && row.trials == 3);
        assert_eq!(row.status, "ok");
    }
    assert!(out.rows[4].axis.is_infinite() && out.rows[4].sim_err_mean.is_none());
    assert!(out.plot_path.unwrap().exists());
    let (_, parsed) = read_csv(&out.csv_path).unwrap();
    assert_eq!(parsed, out.rows);
}

#[test]
fn switches_and_single_trials() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = parse_plan(&base("trials = 1", "[0.5]", "kappa").replace("trials = 3\n", "")).unwrap().remove(0);
    spec.emit_theory = false;
    let row = run_sweep(&spec, &opts(dir.path())).unwrap().rows.remove(0);
    assert!(row.theory_err.is_none() && row.q_theory.is_none());
    assert!(row.sim_err_mean.is_some() && row.sim_err_stderr.is_none() && row.trials == 1);

    let spec = parse_plan(&base("", "[0.0, 0.5]", "gamma2")).unwrap().remove(0);
    assert!(!spec.simulate());
    assert_eq!(spec.report(), Report::Pooled);
    let other = tempfile::tempdir().unwrap();
    let rows = run_sweep(&spec, &opts(other.path())).unwrap().rows;
    assert!(rows.iter().all(|r| r.sim_err_mean.is_none() && r.trials == 0 && r.theory_err.is_some()));
}

#[test]
fn failures_are_recorded_per_row() {
    let dir = tempfile::tempdir().unwrap();
    // rho = 0 has no regression theory and no sampler; the sweep still finishes
    let spec = parse_plan(&base("", "[0.0, 0.5]", "rho")).unwrap().remove(0);
    let rows = run_sweep(&spec, &opts(dir.path())).unwrap().rows;
    assert!(rows[0].status.contains("theory_failed") && rows[0].status.contains("sim_failed"));
    assert_eq!(rows[1].status, "ok");
}

#[test]
fn foreign_file_is_not_overwritten() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parse_plan(&base("", "[0.5]", "kappa")).unwrap().remove(0);
    run_sweep(&spec, &opts(dir.path())).unwrap();
    let mut other = spec.clone();
    other.base.seed = 2;
    assert!(run_sweep(&other, &opts(dir.path())).is_err());
}

#[test]
fn separate_sweep_over_r() {
    let dir = tempfile::tempdir().unwrap();
    let spec = parse_plan(&base("formulation = \"separate\"", "[0.0, 0.5, 1.0]", "R")).unwrap().remove(0);
    let rows = run_sweep(&spec, &opts(dir.path())).unwrap().rows;
    assert!(rows.iter().all(|r| r.status == "ok"));
    let errs: Vec<f64> = rows.iter().map(|r| r.theory_err.unwrap()).collect();
    assert!(errs[0] != errs[2]);
}

#[test]
fn comparison_gap_shrinks_with_tasks() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = preset("fig5a").unwrap().remove(0);
    spec.emit_simulation = Some(false);
    spec.grid = vec![1.0, 2.0, 5.0, 20.0, 100.0];
    let rep = compare_formulations(&spec, &opts(dir.path())).unwrap();
    assert!(rep.theory_gap_shrinks);
    let gaps: Vec<f64> = rep.rows.iter().map(|r| r.theory_gap.unwrap().abs()).collect();
    assert!(gaps[4] < 0.1 * gaps[1], "{gaps:?}");
    let text = fs::read_to_string(&rep.report_path).unwrap();
    assert!(text.contains("theory gap shrinks with T: true"));
    assert!(text.contains("T = 1 is outside the equivalence"));
}

#[test]
fn comparison_without_coupling_has_no_gap() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = preset("fig5a").unwrap().remove(0);
    spec.emit_simulation = Some(false);
    spec.base.gamma2 = 0.0;
    spec.grid = vec![2.0, 8.0, 40.0];
    let rep = compare_formulations(&spec, &opts(dir.path())).unwrap();
    for r in &rep.rows {
        assert!(r.theory_gap.unwrap().abs() < 1e-8, "{r:?}");
    }
}

#[test]
fn rho_curve_file() {
    let dir = tempfile::tempdir().unwrap();
    let mut spec = preset("fig5b").unwrap().remove(0);
    spec.grid = vec![0.0, 0.5, 1.0];
    let curve = rho_curve(&spec, &opts(dir.path())).unwrap();
    assert_eq!(curve.points.len(), 3);
    assert!(curve.points.iter().all(|p| p.status == "ok"));
    assert!(curve.plot_path.unwrap().exists());
    let text = fs::read_to_string(curve.csv_path).unwrap();
    assert!(text.starts_with(&header_comment()));
}

#[test]
fn presets_parse() {
    for (name, _) in PRESETS {
        let specs = preset(name).unwrap();
        assert!(!specs.is_empty());
        for s in &specs {
            assert!(s.base.ambient_dim == 500, "{name}");
        }
    }
    assert_eq!(preset("fig5a").unwrap()[0].kind, RunKind::Compare);
    assert_eq!(preset("fig5b").unwrap()[0].kind, RunKind::RhoCurve);
    let fig6 = &preset("fig6").unwrap()[0];
    assert_eq!(fig6.base.gamma2, 1.0);
    assert_eq!(fig6.base.samples_per_task, vec![125, 250]);
    assert!(preset("fig3").is_err());
}

#[test]
fn cli_smoke() {
    let exe = env!("CARGO_BIN_EXE_mtl-asy");
    let out = Command::new(exe).args(["preset", "list"]).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 8);

    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("c.toml");
    fs::write(
        &config,
        "num_tasks = 2\nambient_dim = 60\nknown_dim = 20\nsamples_per_task = [30, 30]\nrho = 0.8\n\
         gamma1 = 0.1\ngamma2 = 0.5\nloss = \"squared\"\nmodel = \"binary_classification\"\n",
    )
    .unwrap();
    let out = Command::new(exe).args(["theory", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("SaddleSolution") && text.contains("gen_error"));
    let out = Command::new(exe).args(["simulate", "--seed", "4", "--config"]).arg(&config).output().unwrap();
    assert!(out.status.success());
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 4);

    let plan = dir.path().join("plan.toml");
    fs::write(&plan, base("", "[0.25, 0.5]", "kappa")).unwrap();
    let results = dir.path().join("out");
    let out = Command::new(exe)
        .env("MTL_ASY_WORKERS", "2")
        .args(["sweep", "--trials", "2", "--no-theory", "--config"])
        .arg(&plan)
        .arg("--out")
        .arg(&results)
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let (_, rows) = read_csv(&results.join("t.csv")).unwrap();
    assert!(rows.iter().all(|r| r.trials == 2 && r.theory_err.is_none()));
    assert!(results.join("t.svg").exists());
}
