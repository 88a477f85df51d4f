use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use mtl_asymptotics::generr::{empirical_gen_error, empirical_order_params, PredictionSource, TheoryPrediction};
use mtl_asymptotics::model::generate_ensemble;
use mtl_asymptotics::theory::SaddleSolver;
use mtl_asymptotics::train::solve_multitask;
use mtl_asymptotics::{ExperimentConfig, SolverOptions};
use mtl_bench::spec::RunKind;
use mtl_bench::sweep::{general_params, scalar_params};
use mtl_bench::{load_plan, preset, run_plan, Overrides, RunOptions, SweepSpec, PRESETS};

#[derive(Parser)]
#[command(name = "mtl-asy", version, about = "Multi-task learning asymptotics: theory, simulation and sweeps")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment configuration (theory, simulate) or sweep plan (sweep, rho-curve, compare).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long, global = true, env = "MTL_ASY_WORKERS")]
    workers: Option<usize>,
    /// Output directory for CSV and SVG files.
    #[arg(long, global = true, default_value = "results")]
    out: PathBuf,
    /// Overrides the Monte-Carlo trial count of every sweep.
    #[arg(long, global = true)]
    trials: Option<usize>,
    /// Skip the deterministic solves.
    #[arg(long, global = true)]
    no_theory: bool,
    /// Skip the simulations.
    #[arg(long, global = true)]
    no_sim: bool,
    /// Gauss-Hermite order of the expectation quadrature.
    #[arg(long, global = true)]
    quad_order: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the deterministic problem of one configuration.
    Theory,
    /// Run one empirical trial of one configuration.
    Simulate {
        /// Trial index within the seed's streams.
        #[arg(long, default_value_t = 0)]
        trial: u64,
    },
    /// Run every spec of a plan file.
    Sweep,
    /// R(rho) over the plan's rho grid.
    RhoCurve,
    /// Multi-task program against the separate formulation over T.
    Compare,
    /// Run a figure preset; `list` prints the available names.
    Preset { name: String },
}

fn solver_options(cli: &Cli) -> SolverOptions {
    let mut o = SolverOptions::default();
    if let Some(q) = cli.quad_order {
        o.quad_order = q;
    }
    o
}

fn experiment(cli: &Cli) -> Result<ExperimentConfig> {
    let path = cli.config.as_ref().context("--config <experiment.toml> is required")?;
    let mut c = ExperimentConfig::from_path(path)?;
    if let Some(seed) = cli.seed {
        c.seed = seed;
    }
    Ok(c)
}

fn theory(cli: &Cli) -> Result<()> {
    let c = experiment(cli)?;
    let solver = SaddleSolver::new(solver_options(cli))?;
    let ratio = |t: usize| c.kappa(t) / c.alpha(t);
    if c.is_symmetric() {
        let sol = solver.solve_symmetric(&scalar_params(&c, 0), c.num_tasks)?;
        let pred = TheoryPrediction::from_solution(&sol, 0, ratio(0), c.rho, c.model, PredictionSource::Symmetric)?;
        println!("{sol:#?}\n{pred:#?}");
        if c.gamma2 > 0.0 || c.model == mtl_asymptotics::ModelKind::BinaryClassification {
            let lim = solver.solve_infinite_tasks(&scalar_params(&c, 0))?;
            let pred = TheoryPrediction::from_solution(&lim, 0, ratio(0), c.rho, c.model, PredictionSource::InfiniteTasks)?;
            println!("{lim:#?}\n{pred:#?}");
        }
    } else {
        let sol = solver.solve_general(&general_params(&c))?;
        println!("{sol:#?}");
        for t in 0..c.num_tasks {
            let pred = TheoryPrediction::from_solution(&sol, t, ratio(t), c.rho, c.model, PredictionSource::General)?;
            println!("task {t}: {pred:#?}");
        }
    }
    Ok(())
}

fn simulate(cli: &Cli, trial: u64) -> Result<()> {
    let c = experiment(cli)?;
    let e = generate_ensemble(&c, c.seed, trial)?;
    let m = solve_multitask(&e, &c)?;
    println!(
        "objective {:.12e}, gradient norm {:.3e}, {} Newton iterations",
        m.objective_value, m.grad_norm, m.iterations
    );
    println!("task,gen_err,q,r");
    for t in 0..c.num_tasks {
        let err = empirical_gen_error(&m, &e, t)?;
        let (q, r) = empirical_order_params(&m, &e, t)?;
        println!("{t},{err},{q},{r}");
    }
    Ok(())
}

fn plan(cli: &Cli, kind: Option<RunKind>) -> Result<Vec<SweepSpec>> {
    let path = cli.config.as_ref().context("--config <plan.toml> is required")?;
    let mut specs = load_plan(path)?;
    if let Some(kind) = kind {
        for s in &mut specs {
            s.kind = kind;
            s.validate()?;
        }
    }
    Ok(specs)
}

fn run(cli: &Cli, mut specs: Vec<SweepSpec>) -> Result<()> {
    let overrides = Overrides { seed: cli.seed, trials: cli.trials, no_theory: cli.no_theory, no_sim: cli.no_sim };
    for s in &mut specs {
        overrides.apply(s);
    }
    let opts = RunOptions { out_dir: cli.out.clone(), solver: solver_options(cli), plot: true };
    for path in run_plan(&specs, &opts)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = cli.workers {
        if n == 0 {
            bail!("--workers must be at least 1");
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    match &cli.command {
        Command::Theory => theory(&cli),
        Command::Simulate { trial } => simulate(&cli, *trial),
        Command::Sweep => run(&cli, plan(&cli, None)?),
        Command::RhoCurve => run(&cli, plan(&cli, Some(RunKind::RhoCurve))?),
        Command::Compare => run(&cli, plan(&cli, Some(RunKind::Compare))?),
        Command::Preset { name } if name == "list" => {
            for (n, _) in PRESETS {
                println!("{n}");
            }
            Ok(())
        }
        Command::Preset { name } => run(&cli, preset(name)?),
    }
}
