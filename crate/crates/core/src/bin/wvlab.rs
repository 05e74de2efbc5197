//! `wvlab <task> --config scenario.json [--seed N] [--out DIR] [--threads N]`
//!
//! Exit codes: 0 success, 1 validation failure, 2 configuration error,
//! 3 numeric or output error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wvlab_core::harness::config::parse_config;
use wvlab_core::harness::run::{default_out_dir, run, RunError};
use wvlab_core::harness::{ScenarioConfig, ValidationReport};

/// Environment variable overriding the default output directory.
const OUT_ENV: &str = "WVLAB_OUT_DIR";

/// Configuration used by `validate` when no file is given.
const DEFAULT_VALIDATE: &str = r#"{
  "grid": {"x_min": -10, "x_max": 10, "n": 64},
  "initial_state": {"kind": "gaussian", "center": 0, "width": 1},
  "propagator": {"dt": 0.01},
  "task": {"kind": "validate"}
}"#;

#[derive(Parser)]
#[command(name = "wvlab", version, about = "Weak values, Bohmian trajectories and intrinsic properties on a 1D grid")]
struct Cli {
    #[command(subcommand)]
    task: Task,
}

#[derive(Subcommand)]
enum Task {
    /// Evolve the wavefunction and write density frames and a norm log.
    Propagate(Common),
    /// Integrate an equilibrium trajectory ensemble.
    Trajectories(Common),
    /// Weak-value fields of an operator on every frame.
    Weakvalue(Common),
    /// Per-experiment work and its distribution.
    Work(Common),
    /// Dwell times from trajectories, density and the dwell operator.
    Dwell(Common),
    /// Current traces and their power spectral density.
    Psd(Common),
    /// Two-time weak-measurement protocol and operational estimator.
    Measure(Common),
    /// Run the acceptance suite.
    Validate {
        #[command(flatten)]
        common: Common,
        /// Comma-separated criterion ids to run (default: all).
        #[arg(long, value_delimiter = ',')]
        only: Vec<u32>,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (JSON). Optional for `validate`.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed, overriding the scenario's.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: $WVLAB_OUT_DIR, else wvlab-out/<task>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

fn fail(code: u8, msg: impl std::fmt::Display) -> ExitCode {
    eprintln!("wvlab: {msg}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let (name, common, only) = match cli.task {
        Task::Propagate(c) => ("propagate", c, None),
        Task::Trajectories(c) => ("trajectories", c, None),
        Task::Weakvalue(c) => ("weakvalue", c, None),
        Task::Work(c) => ("work", c, None),
        Task::Dwell(c) => ("dwell", c, None),
        Task::Psd(c) => ("psd", c, None),
        Task::Measure(c) => ("measure", c, None),
        Task::Validate { common, only } => ("validate", common, Some(only)),
    };
    if let Some(n) = common.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            return fail(2, format!("--threads: {e}"));
        }
    }
    let text = match &common.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(2, format!("{}: {e}", path.display())),
        },
        None if name == "validate" => DEFAULT_VALIDATE.to_string(),
        None => return fail(2, format!("{name} needs --config")),
    };
    let mut config: ScenarioConfig = match parse_config(&text) {
        Ok(c) => c,
        Err(e) => return fail(2, e),
    };
    if config.task.name() != name {
        return fail(2, format!("subcommand {name} does not match the scenario task {}", config.task.name()));
    }
    if let Some(seed) = common.seed {
        config.ensemble.seed = seed;
    }
    if let (Some(ids), wvlab_core::harness::TaskSpec::Validate { only, .. }) = (only, &mut config.task) {
        if !ids.is_empty() {
            *only = ids;
        }
    }
    let out =
        common.out.or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from)).unwrap_or_else(|| default_out_dir(name));
    log::info!("running {name} (seed {}) into {}", config.ensemble.seed, out.display());
    match run(&config, &out) {
        Ok(manifest) => {
            if name == "validate" {
                let path = out.join("validation.json");
                let report: Option<ValidationReport> =
                    std::fs::read_to_string(&path).ok().and_then(|t| serde_json::from_str(&t).ok());
                if let Some(r) = &report {
                    for c in &r.criteria {
                        println!("{}", c.summary_line());
                    }
                }
                if manifest.metrics.get("all_passed") != Some(&serde_json::Value::Bool(true)) {
                    return fail(1, "acceptance suite has failing criteria");
                }
            } else {
                println!("{}", serde_json::to_string_pretty(&manifest.metrics).unwrap_or_default());
            }
            log::info!("wrote {} files in {:.2} s", manifest.outputs.len() + 1, manifest.wall_clock_s);
            ExitCode::SUCCESS
        }
        Err(RunError::Config(e)) => fail(2, e),
        Err(e) => fail(3, e),
    }
}
