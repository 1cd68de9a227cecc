//! Command-line front end for the landslide hazard pipeline.
//!
//! Every subcommand reads a JSON config (`--config`), writes its outputs
//! and a `resolved_config.json` into `--out-dir`, and exits with 0 on
//! success, 1 when a computation fails and 2 on usage or config errors.
//! Errors are printed to stderr as `{"error": {"kind", "message", "details"}}`.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::json;

use crate::commands::Outputs;
use crate::config::Resolve;
use crate::error::{CliError, EXIT_USAGE};

#[derive(Debug, Parser)]
#[command(name = "hazard", version, about = "Landslide hazard modelling pipeline")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,

    /// JSON run configuration; relative paths inside it are taken
    /// relative to the file's directory.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Overrides the config's top-level seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    /// Output directory, created if absent.
    #[arg(long, global = true, default_value = ".")]
    pub out_dir: PathBuf,

    /// Worker threads for parallel stages.
    #[arg(long, global = true, env = "HAZ_THREADS")]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Split, train and evaluate the joint occurrence/size model.
    Fit,
    /// Hypothesised hazard surfaces for every (q, P) pair.
    Hazard,
    /// Precipitation frequency models and per-site return levels.
    ReturnLevels,
    /// Per-site change classes between two hazard files.
    ScenarioDiff,
    /// Synthetic dataset with ground truth.
    Simulate,
    /// Diagnostics of a saved model on a dataset.
    Evaluate,
    /// Sweep of the loss mixing weight.
    TuneGamma,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Fit => "fit",
            Command::Hazard => "hazard",
            Command::ReturnLevels => "return-levels",
            Command::ScenarioDiff => "scenario-diff",
            Command::Simulate => "simulate",
            Command::Evaluate => "evaluate",
            Command::TuneGamma => "tune-gamma",
        }
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            report(&CliError::usage(e.to_string().trim_end()));
            return EXIT_USAGE;
        }
    };
    match execute(&cli) {
        Ok(paths) => {
            let outputs: Vec<String> = paths.iter().map(|p| p.display().to_string()).collect();
            println!("{}", json!({ "command": cli.command.name(), "outputs": outputs }));
            0
        }
        Err(e) => {
            report(&e);
            e.code
        }
    }
}

fn report(e: &CliError) {
    eprintln!("{}", e.to_json());
}

/// Runs the parsed command inside a pool sized by `--threads`.
pub fn execute(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::usage("--threads must be >= 1"));
        }
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::compute("threads", e.to_string()))?;
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<Vec<PathBuf>, CliError> {
    let mut out = Outputs::new(&cli.out_dir)?;
    let path = cli.config.as_deref();
    match cli.command {
        Command::Fit => {
            let cfg = load_config(path, cli.seed, None, &mut out)?;
            commands::cmd_fit(&cfg, &mut out)?;
        }
        Command::Hazard => {
            let cfg = load_config(path, cli.seed, None, &mut out)?;
            commands::cmd_hazard(&cfg, &mut out)?;
        }
        Command::ReturnLevels => {
            let cfg = load_config(path, cli.seed, None, &mut out)?;
            commands::cmd_return_levels(&cfg, &mut out)?;
        }
        Command::ScenarioDiff => {
            let cfg = load_config(path, cli.seed, None, &mut out)?;
            commands::cmd_scenario_diff(&cfg, &mut out)?;
        }
        Command::Simulate => {
            let cfg = load_config(path, cli.seed, Some(config::SimulateConfig::default()), &mut out)?;
            commands::cmd_simulate(&cfg, &mut out)?;
        }
        Command::Evaluate => {
            let cfg = load_config(path, cli.seed, None, &mut out)?;
            commands::cmd_evaluate(&cfg, &mut out)?;
        }
        Command::TuneGamma => {
            let cfg = load_config(path, cli.seed, None, &mut out)?;
            commands::cmd_tune_gamma(&cfg, &mut out)?;
        }
    }
    Ok(out.into_paths())
}

/// Reads, resolves and records a config. `fallback` is used when no
/// `--config` is given; commands without one require the flag.
fn load_config<T>(path: Option<&Path>, seed: Option<u64>, fallback: Option<T>, out: &mut Outputs) -> Result<T, CliError>
where
    T: DeserializeOwned + Serialize + Resolve,
{
    let (mut cfg, base) = match (path, fallback) {
        (Some(p), _) => {
            let text = match std::fs::read_to_string(p) {
                Ok(t) => t,
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Err(CliError::missing_file(p)),
                Err(e) => return Err(CliError::config(format!("cannot read {}: {e}", p.display()))),
            };
            let cfg: T = serde_json::from_str(&text)
                .map_err(|e| CliError::config(format!("{}: {e}", p.display())))?;
            (cfg, p.parent().map(Path::to_path_buf).unwrap_or_default())
        }
        (None, Some(d)) => (d, PathBuf::new()),
        (None, None) => return Err(CliError::usage("--config is required for this command")),
    };
    if let Some(s) = seed {
        cfg.set_seed(s);
    }
    cfg.resolve(&base)?;
    out.write_json("resolved_config.json", &cfg)?;
    Ok(cfg)
}
