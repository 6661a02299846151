//! `hyexo`: model checks, motion solves, closure benchmarks and plot data.
//!
//! Exit codes: 0 success, 1 internal failure, 2 solver did not converge, 3 validation
//! violations, 4 infeasible recipe, 64 usage, 65 invalid model or recipe, 66 unreadable
//! input, 73 output not writable.

mod output;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::anyhow;
use clap::{Parser, Subcommand};
use hyexo::actuation::{benchmark_closure_rate, map_to_actuation, sample_trajectory};
use hyexo::modelio::{build_model, parse_model, parse_recipe, BuiltModel, MotionKind, RecipeDocument, Severity};
use hyexo::motions::{
    build_sit_stand, build_static_walk, solution_trajectory, solve_plan, solver_settings, validate_trajectory, Direction, MotionModel,
};
use hyexo::Error;

use output::{Overrides, RunManifest, ValidationFile};

const EXIT_INTERNAL: u8 = 1;
const EXIT_NO_CONVERGENCE: u8 = 2;
const EXIT_VIOLATIONS: u8 = 3;
const EXIT_INFEASIBLE: u8 = 4;
const EXIT_USAGE: u8 = 64;
const EXIT_DATA: u8 = 65;
const EXIT_NO_INPUT: u8 = 66;
const EXIT_CANT_CREATE: u8 = 73;

#[derive(Debug, Parser)]
#[command(name = "hyexo", version, about = "Motion generation for series-parallel hybrid exoskeletons", arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve a motion recipe and write trajectory, actuator, validation and log files.
    Solve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        recipe: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Recorded in the manifest; the pipeline itself draws no random numbers.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        max_iters: Option<usize>,
        /// Node spacing in seconds, overriding the recipe.
        #[arg(long, value_parser = positive)]
        dt: Option<f64>,
    },
    /// Build a model file and run its structural checks.
    CheckModel { path: PathBuf },
    /// Time closure resolution plus actuation-space inverse dynamics per knot.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 1000, value_parser = clap::value_parser!(u64).range(2..))]
        knots: u64,
        /// Knot spacing of the benchmark trajectory.
        #[arg(long, default_value_t = 0.001, value_parser = positive)]
        dt: f64,
    },
    /// Print `time,series,value` rows for a solve output directory or one of its CSV files.
    Plotdata { path: PathBuf },
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

impl Failure {
    fn new(code: u8, error: impl Into<anyhow::Error>) -> Self {
        Self { code, error: error.into() }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::InfeasibleRecipe(_) => EXIT_INFEASIBLE,
            Error::NoProgress(_) => EXIT_NO_CONVERGENCE,
            Error::Model(_) | Error::InvalidArgument(_) => EXIT_DATA,
            _ => EXIT_INTERNAL,
        };
        Self::new(code, e)
    }
}

type CmdResult = Result<u8, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("HYEXO_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { EXIT_USAGE } else { 0 });
        }
    };
    let result = match cli.command {
        Command::Solve { model, recipe, out, seed, max_iters, dt } => solve(&model, &recipe, &out, seed, max_iters, dt),
        Command::CheckModel { path } => check_model(&path),
        Command::Bench { model, knots, dt } => bench(&model, knots as usize, dt),
        Command::Plotdata { path } => plotdata(&path),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.error);
            ExitCode::from(f.code)
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::new(EXIT_NO_INPUT, anyhow!("cannot read {}: {e}", path.display())))
}

fn write(dir: &Path, name: &str, contents: &str) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Failure::new(EXIT_CANT_CREATE, anyhow!("cannot write {}: {e}", path.display())))
}

fn load_model(path: &Path) -> Result<BuiltModel, Failure> {
    let doc = parse_model(&read(path)?).map_err(|e| Failure::new(EXIT_DATA, anyhow!("{}: {e}", path.display())))?;
    build_model(&doc).map_err(|e| Failure { error: anyhow!("{}: {e}", path.display()), ..e.into() })
}

fn solve(model_path: &Path, recipe_path: &Path, out: &Path, seed: u64, max_iters: Option<usize>, dt: Option<f64>) -> CmdResult {
    let built = load_model(model_path)?;
    let mut recipe: RecipeDocument =
        parse_recipe(&read(recipe_path)?).map_err(|e| Failure::new(EXIT_DATA, anyhow!("{}: {e}", recipe_path.display())))?;
    if let Some(dt) = dt {
        recipe.dt = dt;
    }
    if max_iters.is_some() {
        recipe.solver.max_iters = max_iters;
    }
    let mm = MotionModel::new(&built)?;
    let plan = match recipe.motion {
        MotionKind::Sit => build_sit_stand(&mm, Direction::Sit, &recipe, None)?,
        MotionKind::Stand => build_sit_stand(&mm, Direction::Stand, &recipe, None)?,
        MotionKind::Walk => build_static_walk(&mm, &recipe)?,
    };
    log::info!("{} phases, {} nodes", plan.recipe.phases.len(), plan.problem.horizon());
    let started = Instant::now();
    let sol = solve_plan(&plan, &solver_settings(&recipe))?;
    log::info!("solver: {} iterations, cost {:.6e}, {:.1?}", sol.iterations, sol.cost, started.elapsed());
    let traj = solution_trajectory(&mm, &plan, &sol)?;
    // a mapping failure is a finding about the motion, reported alongside the others
    let act = map_to_actuation(&built, &traj);
    let mut report = validate_trajectory(&mm, &traj, act.as_ref().ok(), &plan.validation_limits(&recipe));
    if let Err(e) = &act {
        report.violation("actuation", e.to_string(), f64::NAN);
        report = report.finish();
    }

    fs::create_dir_all(out).map_err(|e| Failure::new(EXIT_CANT_CREATE, anyhow!("cannot create {}: {e}", out.display())))?;
    let joints: Vec<String> = mm.independent.iter().map(|c| c.name.clone()).collect();
    write(out, "trajectory.csv", &output::trajectory_csv(&joints, &traj))?;
    match &act {
        Ok(act) => write(out, "actuators.csv", &output::actuators_csv(act))?,
        Err(_) => {
            // never leave a stale file from an earlier run next to the new trajectory
            let _ = fs::remove_file(out.join("actuators.csv"));
        }
    }
    write(out, "solve_log.csv", &output::solve_log_csv(&sol))?;
    let violations = report.violations().count();
    let validation = ValidationFile {
        converged: sol.converged,
        iterations: sol.iterations,
        cost: sol.cost,
        max_gap: sol.max_gap(),
        violations,
        entries: &report.entries,
    };
    write(out, "validation.json", &output::to_json(&validation))?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        model_path: model_path.display().to_string(),
        recipe_path: recipe_path.display().to_string(),
        output_dir: out.display().to_string(),
        seed,
        overrides: Overrides { max_iters, dt },
    };
    write(out, "manifest.json", &output::to_json(&manifest))?;

    if !sol.converged {
        eprintln!("solver stopped after {} iterations without converging (max gap {:.3e})", sol.iterations, sol.max_gap());
        return Ok(EXIT_NO_CONVERGENCE);
    }
    if violations > 0 {
        for v in report.violations() {
            match v.value.is_finite() {
                true => eprintln!("violation: {}: {} ({})", v.location, v.message, v.value),
                false => eprintln!("violation: {}: {}", v.location, v.message),
            }
        }
        return Ok(EXIT_VIOLATIONS);
    }
    Ok(0)
}

fn check_model(path: &Path) -> CmdResult {
    let built = load_model(path)?;
    let report = built.check();
    println!("n={} m={} p={} n_c={}", built.n(), built.m(), built.p(), built.n_c());
    for e in &report.entries {
        match e.severity {
            Severity::Info if e.location != "model" => println!("{}: {}", e.location, e.message),
            Severity::Info => {}
            Severity::Warning => eprintln!("warning: {}: {} ({})", e.location, e.message, e.value),
            Severity::Violation => eprintln!("violation: {}: {} ({})", e.location, e.message, e.value),
        }
    }
    Ok(if report.has_violations() { EXIT_VIOLATIONS } else { 0 })
}

fn bench(model_path: &Path, knots: usize, dt: f64) -> CmdResult {
    let built = load_model(model_path)?;
    let traj = sample_trajectory(&built.independent, knots, dt)?;
    let warm = benchmark_closure_rate(&built, &traj, true)?;
    let cold = benchmark_closure_rate(&built, &traj, false)?;
    println!("{:<6} {:>7} {:>10} {:>10} {:>10}", "start", "knots", "mean_us", "p99_us", "max_us");
    for (name, r) in [("warm", &warm), ("cold", &cold)] {
        println!("{name:<6} {:>7} {:>10.1} {:>10.1} {:>10.1}", r.knots, r.mean_us, r.p99_us, r.max_us);
    }
    println!();
    println!("newton iterations per knot, warm start (iterations:knots)");
    for (block, hist) in &warm.iterations {
        let cells: Vec<String> = hist.iter().map(|(it, n)| format!("{it}:{n}")).collect();
        println!("  {block:<10} {}", cells.join(" "));
    }
    Ok(0)
}

fn plotdata(path: &Path) -> CmdResult {
    let sources: Vec<PathBuf> = if path.is_dir() {
        ["trajectory.csv", "actuators.csv"].iter().map(|f| path.join(f)).filter(|p| p.exists()).collect()
    } else {
        vec![path.to_path_buf()]
    };
    if sources.is_empty() {
        return Err(Failure::new(EXIT_NO_INPUT, anyhow!("{} holds no trajectory.csv or actuators.csv", path.display())));
    }
    let mut out = String::from("time,series,value\n");
    for s in &sources {
        output::long_format(&read(s)?, &s.display().to_string(), &mut out).map_err(|e| Failure::new(EXIT_DATA, e))?;
    }
    print!("{out}");
    Ok(0)
}
