//! `devslam`: generate plans and worlds, simulate traces, run the
//! pipeline and aggregate reports.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use deviation_slam::eval::{self, PipelineConfig, RunReport};
use deviation_slam::fusion::{deviations_csv, Mode};
use deviation_slam::plan_model::{build_agraph, load_plan};
use deviation_slam::simulator::{
    default_visit_order, generate_environment, parse_trace, plan_trajectory, simulate_run, write_trace,
    EnvironmentSpec, NoiseParams, WorldModel,
};

const EXIT_NO_CONVERGENCE: u8 = 2;
const EXIT_INPUT: u8 = 3;

#[derive(Parser)]
#[command(name = "devslam", version, about = "Plan-based localization with as-built deviation estimation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a plan and an as-built world from an environment spec.
    PlanGen {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Simulate a tour through a generated world and write a sensor trace.
    Simulate {
        /// Directory written by `plan-gen`.
        #[arg(long)]
        world: PathBuf,
        /// `standard`, `zero`, or a JSON noise file.
        #[arg(long, default_value = "standard")]
        noise: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the full pipeline on a plan and a trace.
    Run {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long)]
        trace: PathBuf,
        #[arg(long, default_value = "full")]
        mode: Mode,
        #[arg(long)]
        report: PathBuf,
        /// Standard deviation of the origin-merge factor.
        #[arg(long)]
        origin_sigma: Option<f64>,
        /// Match and optimize once at the end of the trace.
        #[arg(long)]
        batch: bool,
        #[arg(long)]
        deviations_csv: Option<PathBuf>,
        #[arg(long)]
        trajectory: Option<PathBuf>,
    },
    /// Aggregate JSON reports from a directory into a CSV summary.
    Eval {
        #[arg(long)]
        reports: PathBuf,
        #[arg(long)]
        summary: PathBuf,
    },
    /// Check or regenerate the golden files.
    Golden {
        #[arg(long)]
        update: bool,
        #[arg(long, default_value = "crates/core/tests/golden")]
        dir: PathBuf,
    },
}

#[derive(Debug)]
enum CliError {
    Input(String),
    Pipeline(String),
    NoConvergence,
    GoldenMismatch(Vec<String>),
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(e.to_string())
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    fs::read_to_string(path).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn write(path: &Path, contents: &str) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, contents).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

fn json<T: serde::Serialize>(v: &T) -> Result<String, CliError> {
    serde_json::to_string_pretty(v).map(|s| s + "\n").map_err(|e| CliError::Input(e.to_string()))
}

fn noise_from(arg: &str) -> Result<NoiseParams, CliError> {
    match arg {
        "standard" => Ok(NoiseParams::standard()),
        "zero" => Ok(NoiseParams::zero()),
        path => serde_json::from_str(&read(Path::new(path))?).map_err(|e| CliError::Input(format!("{path}: {e}"))),
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::PlanGen { spec, out } => {
            let spec: EnvironmentSpec =
                serde_json::from_str(&read(&spec)?).map_err(|e| CliError::Input(format!("{}: {e}", spec.display())))?;
            let (plan, world) = generate_environment(&spec).map_err(|e| CliError::Input(e.to_string()))?;
            write(&out.join("plan.json"), &json(&plan)?)?;
            write(&out.join("world.json"), &json(&world)?)?;
            write(&out.join("spec.json"), &json(&spec)?)?;
        }
        Command::Simulate { world, noise, seed, out } => {
            let path = world.join("world.json");
            let world: WorldModel =
                serde_json::from_str(&read(&path)?).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))?;
            let noise = noise_from(&noise)?;
            let order = default_visit_order(&world.plan);
            let wp = plan_trajectory(&world, &order).map_err(|e| CliError::Input(e.to_string()))?;
            write(&out, &write_trace(&simulate_run(&world, &wp, &noise, seed)))?;
        }
        Command::Run { plan, trace, mode, report, origin_sigma, batch, deviations_csv: csv, trajectory } => {
            let plan = load_plan(&plan).map_err(|e| CliError::Input(e.to_string()))?;
            let trace = parse_trace(&read(&trace)?).map_err(|e| CliError::Input(e.to_string()))?;
            let mut cfg = PipelineConfig::with_mode(mode);
            cfg.batch = batch;
            if let Some(s) = origin_sigma {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(CliError::Input("--origin-sigma must be positive".into()));
                }
                cfg.fusion.origin_sigma = s;
            }
            let ag = build_agraph(&plan).map_err(|e| CliError::Input(e.to_string()))?;
            let out = eval::run_pipeline(&ag, &trace, &cfg).map_err(|e| CliError::Pipeline(e.to_string()))?;
            let rep = eval::report(&plan, &ag, &trace, &out, mode);
            write(&report, &json(&rep)?)?;
            if let (Some(path), Some(dis)) = (csv, out.dis.as_ref()) {
                write(&path, &deviations_csv(&dis.deviation_estimates(&ag)))?;
            }
            if let Some(path) = trajectory {
                write(&path, &eval::trajectory_lines(&out.trajectory()))?;
            }
            if !rep.converged {
                return Err(CliError::NoConvergence);
            }
        }
        Command::Eval { reports, summary } => {
            let mut files: Vec<PathBuf> = fs::read_dir(&reports)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "json"))
                .collect();
            files.sort();
            let mut rows = Vec::new();
            for f in files {
                let r: RunReport =
                    serde_json::from_str(&read(&f)?).map_err(|e| CliError::Input(format!("{}: {e}", f.display())))?;
                let name = f.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                rows.push((name, r));
            }
            write(&summary, &eval::summary_csv(&rows))?;
        }
        Command::Golden { update, dir } => {
            let artifacts = eval::golden_artifacts().map_err(|e| CliError::Pipeline(e.to_string()))?;
            let mut mismatched = Vec::new();
            for (name, contents) in artifacts {
                let path = dir.join(&name);
                if update {
                    write(&path, &contents)?;
                } else if fs::read_to_string(&path).ok().as_deref() != Some(contents.as_str()) {
                    mismatched.push(name);
                }
            }
            if !mismatched.is_empty() {
                return Err(CliError::GoldenMismatch(mismatched));
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Input(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_INPUT)
        }
        Err(CliError::Pipeline(msg)) => {
            eprintln!("pipeline error: {msg}");
            ExitCode::FAILURE
        }
        Err(CliError::NoConvergence) => {
            eprintln!("localization did not converge");
            ExitCode::from(EXIT_NO_CONVERGENCE)
        }
        Err(CliError::GoldenMismatch(files)) => {
            eprintln!("golden files differ: {}", files.join(", "));
            ExitCode::FAILURE
        }
    }
}
