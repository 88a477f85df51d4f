//! Sweep execution: theory and Monte-Carlo trials per grid point, CSV
//! persistence with resume.
//!
//! Rows are appended as points finish, so an interrupted run leaves every
//! completed point on disk. On completion the file is rewritten in grid order.
//! A point is reused on resume when the file's fingerprint line matches the
//! spec and seed and all of the point's rows are present.

use std::collections::HashMap;
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use mtl_asymptotics::generr::{
    empirical_gen_error, empirical_order_params, solve_r_of_rho, PredictionSource, TheoryPrediction,
};
use mtl_asymptotics::model::generate_ensemble;
use mtl_asymptotics::theory::{GeneralParams, SaddleSolution, SaddleSolver, ScalarParams};
use mtl_asymptotics::train::{solve_multitask, solve_separate};
use mtl_asymptotics::{ExperimentConfig, SolverOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::spec::{Axis, Formulation, RChoice, Report, SweepSpec};

pub const SCHEMA_VERSION: u32 = 1;

pub fn header_comment() -> String {
    format!("# mtl-asymptotics v{} schema={SCHEMA_VERSION}", env!("CARGO_PKG_VERSION"))
}

/// One CSV row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub axis: f64,
    pub task: usize,
    pub theory_err: Option<f64>,
    pub sim_err_mean: Option<f64>,
    pub sim_err_stderr: Option<f64>,
    pub q_theory: Option<f64>,
    pub r_theory: Option<f64>,
    pub q_emp_mean: Option<f64>,
    pub r_emp_mean: Option<f64>,
    pub trials: usize,
    pub status: String,
    pub wall_time_ms: u64,
}

impl ResultRow {
    fn empty(axis: f64, task: usize) -> Self {
        Self {
            axis,
            task,
            theory_err: None,
            sim_err_mean: None,
            sim_err_stderr: None,
            q_theory: None,
            r_theory: None,
            q_emp_mean: None,
            r_emp_mean: None,
            trials: 0,
            status: String::new(),
            wall_time_ms: 0,
        }
    }
}

/// Where and how a sweep runs. Parallelism comes from the ambient rayon pool.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub solver: SolverOptions,
    pub plot: bool,
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    pub rows: Vec<ResultRow>,
    pub csv_path: PathBuf,
    pub plot_path: Option<PathBuf>,
    /// Grid points taken from an earlier partial run.
    pub resumed_points: usize,
}

/// Welford accumulation in a fixed order.
#[derive(Debug, Clone, Copy, Default)]
pub struct Welford {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Welford {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn mean(&self) -> Option<f64> {
        (self.n > 0).then_some(self.mean)
    }

    pub fn stderr(&self) -> Option<f64> {
        (self.n >= 2).then(|| (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Ensemble seed of one grid point; depends only on the base seed and the value.
pub fn point_seed(seed: u64, value: f64) -> u64 {
    splitmix64(seed ^ splitmix64(value.to_bits()))
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Identifies the spec, seed and solver settings an output file belongs to.
pub fn fingerprint_line(spec: &SweepSpec, solver: &SolverOptions) -> String {
    let text = format!(
        "{}\n{}",
        toml::to_string(spec).expect("spec is serializable"),
        toml::to_string(solver).expect("options are serializable")
    );
    format!("# sweep={} seed={} spec={:016x}", spec.name, spec.base.seed, fnv1a(text.as_bytes()))
}

pub fn scalar_params(c: &ExperimentConfig, task: usize) -> ScalarParams {
    ScalarParams {
        alpha: c.alpha(task),
        kappa: c.kappa(task),
        rho: c.rho,
        gamma1: c.gamma1,
        gamma2: c.gamma2,
        loss: c.loss,
        model: c.model,
    }
}

pub fn general_params(c: &ExperimentConfig) -> GeneralParams {
    GeneralParams {
        alphas: c.alphas(),
        kappas: c.kappas(),
        rho: c.rho,
        gamma1: c.gamma1,
        gamma2: c.gamma2,
        loss: c.loss,
        model: c.model,
    }
}

/// Per-task predictions for the configuration's own formulation.
#[derive(Debug, Clone)]
pub struct TheoryPoint {
    pub q: Vec<f64>,
    pub r: Vec<f64>,
    pub err: Vec<f64>,
    pub converged: bool,
}

fn from_solutions(c: &ExperimentConfig, sols: &[(SaddleSolution, usize)], source: PredictionSource) -> Result<TheoryPoint> {
    let mut out = TheoryPoint { q: vec![], r: vec![], err: vec![], converged: true };
    for (t, (sol, idx)) in sols.iter().enumerate() {
        let p = TheoryPrediction::from_solution(sol, *idx, c.kappa(t) / c.alpha(t), c.rho, c.model, source)?;
        out.q.push(sol.q[*idx]);
        out.r.push(sol.r[*idx]);
        out.err.push(p.gen_error);
        out.converged &= sol.converged;
    }
    Ok(out)
}

/// Theory for the multi-task program: the symmetric problem when all tasks
/// share their ratios, the general problem otherwise.
pub fn multitask_theory(solver: &SaddleSolver, c: &ExperimentConfig) -> Result<TheoryPoint> {
    let t = c.num_tasks;
    if c.is_symmetric() {
        let sol = solver.solve_symmetric(&scalar_params(c, 0), t)?;
        from_solutions(c, &vec![(sol, 0); t], PredictionSource::Symmetric)
    } else {
        let sol = solver.solve_general(&general_params(c))?;
        let sols: Vec<_> = (0..t).map(|i| (sol.clone(), i)).collect();
        from_solutions(c, &sols, PredictionSource::General)
    }
}

pub fn separate_theory(solver: &SaddleSolver, c: &ExperimentConfig, r_strength: f64) -> Result<TheoryPoint> {
    let sols = (0..c.num_tasks)
        .map(|t| Ok((solver.solve_separate(&scalar_params(c, t), r_strength)?, 0)))
        .collect::<Result<Vec<_>>>()?;
    from_solutions(c, &sols, PredictionSource::Separate)
}

pub fn infinite_task_theory(solver: &SaddleSolver, c: &ExperimentConfig) -> Result<TheoryPoint> {
    let sol = solver.solve_infinite_tasks(&scalar_params(c, 0))?;
    from_solutions(c, &[(sol, 0)], PredictionSource::InfiniteTasks)
}

/// One trial's per-task `(error, q, r)`.
pub type TrialResult = Vec<(f64, f64, f64)>;

pub fn run_trial(c: &ExperimentConfig, formulation: Formulation, r_strength: f64, seed: u64, trial: u64) -> Result<TrialResult> {
    let ensemble = generate_ensemble(c, seed, trial)?;
    let model = match formulation {
        Formulation::Multitask => solve_multitask(&ensemble, c)?,
        Formulation::Separate => solve_separate(&ensemble, c, r_strength)?,
    };
    (0..c.num_tasks)
        .map(|t| {
            let err = empirical_gen_error(&model, &ensemble, t)?;
            let (q, r) = empirical_order_params(&model, &ensemble, t)?;
            Ok((err, q, r))
        })
        .collect::<mtl_asymptotics::Result<_>>()
        .map_err(Into::into)
}

fn report_tasks(report: Report, tasks: usize) -> Vec<usize> {
    match report {
        Report::All => (0..tasks).collect(),
        Report::First | Report::Pooled => vec![0],
    }
}

fn r_for_point(spec: &SweepSpec, solver: &SaddleSolver, c: &ExperimentConfig, value: f64) -> Result<f64> {
    Ok(match (spec.axis, spec.r_strength) {
        (Axis::RStrength, _) => value,
        (_, Some(RChoice::Fixed(r))) => r,
        (_, Some(RChoice::Named(_))) => {
            if !c.is_symmetric() {
                bail!("r_strength = \"auto\" needs equal sample sizes");
            }
            solve_r_of_rho(solver, &scalar_params(c, 0))?.r_strength
        }
        (_, None) => 0.0,
    })
}

fn short(e: &anyhow::Error) -> String {
    e.to_string().replace([',', '\n', '"'], " ")
}

/// Theory and simulation at one grid value.
pub fn evaluate_point(spec: &SweepSpec, solver: &SaddleSolver, value: f64) -> Vec<ResultRow> {
    let start = Instant::now();
    let mut status: Vec<String> = Vec::new();
    let config = spec.config_at(value);
    let tasks = config.as_ref().map(|c| c.num_tasks).unwrap_or(1);
    let shown = report_tasks(spec.report(), tasks);
    let mut rows: Vec<ResultRow> = shown.iter().map(|&t| ResultRow::empty(value, t)).collect();
    let c = match config {
        Ok(c) => c,
        Err(e) => {
            for row in &mut rows {
                row.status = format!("invalid: {}", short(&e));
            }
            return rows;
        }
    };
    let r_strength = match spec.formulation {
        Formulation::Multitask => Ok(0.0),
        Formulation::Separate => r_for_point(spec, solver, &c, value),
    };

    if spec.emit_theory {
        let theory = r_strength.as_ref().map_err(|e| anyhow::anyhow!(short(e))).and_then(|&r| match spec.formulation {
            Formulation::Multitask => multitask_theory(solver, &c),
            Formulation::Separate => separate_theory(solver, &c, r),
        });
        match theory {
            Ok(th) => {
                if !th.converged {
                    status.push("theory_unconverged".into());
                }
                for row in &mut rows {
                    let t = row.task;
                    if spec.report() == Report::Pooled {
                        let m = th.err.len() as f64;
                        row.theory_err = Some(th.err.iter().sum::<f64>() / m);
                        row.q_theory = Some(th.q.iter().sum::<f64>() / m);
                        row.r_theory = Some(th.r.iter().sum::<f64>() / m);
                    } else {
                        row.theory_err = Some(th.err[t]);
                        row.q_theory = Some(th.q[t]);
                        row.r_theory = Some(th.r[t]);
                    }
                }
            }
            Err(e) => {
                log::warn!("{} at {} = {value}: theory failed: {e:#}", spec.name, spec.axis.label());
                status.push(format!("theory_failed: {}", short(&e)));
            }
        }
    }

    if spec.simulate() {
        match &r_strength {
            Ok(r) => {
                let seed = point_seed(c.seed, value);
                let trials: Vec<Result<TrialResult>> = (0..spec.trials as u64)
                    .into_par_iter()
                    .map(|trial| run_trial(&c, spec.formulation, *r, seed, trial))
                    .collect();
                let failures = trials.iter().filter(|t| t.is_err()).count();
                if let Some(Err(e)) = trials.iter().find(|t| t.is_err()) {
                    log::warn!("{} at {} = {value}: {failures} trials failed: {e:#}", spec.name, spec.axis.label());
                    status.push(format!("sim_failed {failures}/{}: {}", spec.trials, short(e)));
                }
                let ok: Vec<&TrialResult> = trials.iter().filter_map(|t| t.as_ref().ok()).collect();
                for row in &mut rows {
                    let (mut err, mut q, mut r) = (Welford::default(), Welford::default(), Welford::default());
                    for trial in &ok {
                        let pick = |f: fn(&(f64, f64, f64)) -> f64| match spec.report() {
                            Report::Pooled => trial.iter().map(f).sum::<f64>() / trial.len() as f64,
                            _ => f(&trial[row.task]),
                        };
                        err.push(pick(|x| x.0));
                        q.push(pick(|x| x.1));
                        r.push(pick(|x| x.2));
                    }
                    row.sim_err_mean = err.mean();
                    row.sim_err_stderr = err.stderr();
                    row.q_emp_mean = q.mean();
                    row.r_emp_mean = r.mean();
                    row.trials = err.count();
                }
            }
            Err(e) => status.push(format!("sim_failed: {}", short(e))),
        }
    }

    let status = if status.is_empty() { "ok".to_string() } else { status.join("; ") };
    let ms = start.elapsed().as_millis() as u64;
    for row in &mut rows {
        row.status = status.clone();
        row.wall_time_ms = ms;
    }
    rows
}

fn limit_rows(spec: &SweepSpec, solver: &SaddleSolver) -> Vec<ResultRow> {
    let start = Instant::now();
    let mut row = ResultRow::empty(f64::INFINITY, 0);
    match infinite_task_theory(solver, &spec.base) {
        Ok(th) => {
            row.theory_err = Some(th.err[0]);
            row.q_theory = Some(th.q[0]);
            row.r_theory = Some(th.r[0]);
            row.status = if th.converged { "ok".into() } else { "theory_unconverged".into() };
        }
        Err(e) => row.status = format!("theory_failed: {}", short(&e.into())),
    }
    row.wall_time_ms = start.elapsed().as_millis() as u64;
    vec![row]
}

fn rows_to_csv(rows: &[ResultRow], with_header: bool) -> Result<Vec<u8>> {
    let mut w = csv::WriterBuilder::new().has_headers(with_header).from_writer(Vec::new());
    for row in rows {
        w.serialize(row)?;
    }
    Ok(w.into_inner().map_err(|e| anyhow::anyhow!("{e}"))?)
}

/// Reads a sweep CSV; returns the comment lines and every well-formed row.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<ResultRow>)> {
    let file = File::open(path).with_context(|| format!("cannot open {}", path.display()))?;
    let mut comments = Vec::new();
    let mut body = String::new();
    for line in BufReader::new(file).lines() {
        let line = line?;
        if line.starts_with('#') {
            comments.push(line);
        } else {
            body.push_str(&line);
            body.push('\n');
        }
    }
    let mut rows = Vec::new();
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    for rec in reader.deserialize::<ResultRow>() {
        match rec {
            Ok(r) => rows.push(r),
            // a torn last line from an interrupted run
            Err(_) => break,
        }
    }
    Ok((comments, rows))
}

pub fn csv_path(spec: &SweepSpec, opts: &RunOptions) -> PathBuf {
    opts.out_dir.join(format!("{}.csv", spec.name))
}

/// Completed points of an earlier run with the same fingerprint.
fn resumable(path: &Path, fingerprint: &str) -> Result<HashMap<u64, Vec<ResultRow>>> {
    let mut done: HashMap<u64, Vec<ResultRow>> = HashMap::new();
    if !path.exists() {
        return Ok(done);
    }
    let (comments, rows) = read_csv(path)?;
    if comments.get(1).map(String::as_str) != Some(fingerprint) {
        bail!(
            "{} belongs to a different sweep, seed or solver setting; remove it or choose another --out",
            path.display()
        );
    }
    for row in rows {
        done.entry(row.axis.to_bits()).or_default().push(row);
    }
    Ok(done)
}

/// Runs every grid point, reusing completed points of an interrupted run.
pub fn run_sweep(spec: &SweepSpec, opts: &RunOptions) -> Result<SweepOutcome> {
    spec.validate()?;
    if spec.limit_row && !spec.base.is_symmetric() {
        bail!("sweep {}: limit_row needs equal sample sizes", spec.name);
    }
    fs::create_dir_all(&opts.out_dir).with_context(|| format!("cannot create {}", opts.out_dir.display()))?;
    let solver = SaddleSolver::new(opts.solver)?;
    let path = csv_path(spec, opts);
    let fingerprint = fingerprint_line(spec, &opts.solver);
    let mut done = resumable(&path, &fingerprint)?;

    let expected = |value: f64| match spec.config_at(value) {
        Ok(c) => report_tasks(spec.report(), c.num_tasks).len(),
        Err(_) => report_tasks(spec.report(), 1).len(),
    };
    let mut points: Vec<f64> = spec.grid.clone();
    if spec.limit_row {
        points.push(f64::INFINITY);
    }
    let mut finished: HashMap<u64, Vec<ResultRow>> = HashMap::new();
    for &v in &points {
        let want = if v.is_infinite() { 1 } else { expected(v) };
        if let Some(rows) = done.remove(&v.to_bits()) {
            if rows.len() == want {
                finished.insert(v.to_bits(), rows);
            }
        }
    }
    let resumed_points = finished.len();

    // rewrite the partial file with only the complete points, then append
    let mut initial = format!("{}\n{}\n", header_comment(), fingerprint).into_bytes();
    let kept: Vec<ResultRow> =
        points.iter().filter_map(|v| finished.get(&v.to_bits())).flatten().cloned().collect();
    initial.extend(rows_to_csv(&kept, true)?);
    if kept.is_empty() {
        initial.extend(b"axis,task,theory_err,sim_err_mean,sim_err_stderr,q_theory,r_theory,q_emp_mean,r_emp_mean,trials,status,wall_time_ms\n");
    }
    fs::write(&path, &initial)?;
    let writer = Mutex::new(OpenOptions::new().append(true).open(&path)?);

    let todo: Vec<f64> = points.iter().copied().filter(|v| !finished.contains_key(&v.to_bits())).collect();
    let computed: Vec<(f64, Vec<ResultRow>)> = todo
        .par_iter()
        .map(|&v| -> Result<(f64, Vec<ResultRow>)> {
            let rows = if v.is_infinite() { limit_rows(spec, &solver) } else { evaluate_point(spec, &solver, v) };
            let bytes = rows_to_csv(&rows, false)?;
            let mut f = writer.lock().expect("writer lock");
            f.write_all(&bytes)?;
            f.flush()?;
            log::info!("{}: {} = {v} done ({})", spec.name, spec.axis.label(), rows[0].status);
            Ok((v, rows))
        })
        .collect::<Result<_>>()?;
    drop(writer);
    for (v, rows) in computed {
        finished.insert(v.to_bits(), rows);
    }

    let rows: Vec<ResultRow> = points.iter().flat_map(|v| finished.remove(&v.to_bits()).unwrap_or_default()).collect();
    let mut out = format!("{}\n{}\n", header_comment(), fingerprint).into_bytes();
    out.extend(rows_to_csv(&rows, true)?);
    let tmp = path.with_extension("csv.tmp");
    fs::write(&tmp, &out)?;
    fs::rename(&tmp, &path)?;

    let plot_path = if opts.plot {
        let p = opts.out_dir.join(format!("{}.svg", spec.name));
        match crate::plot::overlay(&p, spec, &rows) {
            Ok(()) => Some(p),
            Err(e) => {
                log::warn!("plot for {} failed: {e:#}", spec.name);
                None
            }
        }
    } else {
        None
    };
    Ok(SweepOutcome { rows, csv_path: path, plot_path, resumed_points })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn welford_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, 7.0, -1.0];
        let mut w = Welford::default();
        xs.iter().for_each(|&x| w.push(x));
        let mean = xs.iter().sum::<f64>() / 5.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 4.0;
        assert!((w.mean().unwrap() - mean).abs() < 1e-15);
        assert!((w.stderr().unwrap() - (var / 5.0).sqrt()).abs() < 1e-15);
        let mut one = Welford::default();
        one.push(3.0);
        assert_eq!(one.stderr(), None);
    }

    #[test]
    fn point_seeds_differ() {
        assert_ne!(point_seed(1, 0.5), point_seed(1, 0.75));
        assert_ne!(point_seed(1, 0.5), point_seed(2, 0.5));
        assert_eq!(point_seed(9, 1.25), point_seed(9, 1.25));
    }
}
