//! Command-line entry point.
//!
//! Exit codes: 0 on success, 1 on usage/config errors, 2 on runtime
//! failures. Structured errors go to stderr; stdout carries only data.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use treedsb::config::{ConfigError, ExperimentConfig};
use treedsb::run::{
    cmd_eval_uvp, cmd_gen_data, cmd_oracle_barycenter, cmd_oracle_sinkhorn, cmd_run,
    gaussian_from_spec, oracle_barycenter_from_config, GaussianTargetSpec, RunError,
};

#[derive(Parser)]
#[command(name = "treedsb", version, about = "Tree-structured entropic transport via learned diffusions")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a dataset CSV from the config's `dataset.*` keys.
    GenData(GenDataArgs),
    /// Train the edge networks and write metrics, samples, and checkpoints.
    Run(RunArgs),
    /// Exact solvers on small instances.
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Metric evaluation of sample files.
    #[command(subcommand)]
    Eval(EvalCommand),
}

#[derive(Args)]
struct GenDataArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Subcommand)]
enum OracleCommand {
    /// Discrete tree-structured solver; writes node marginals and a report.
    Sinkhorn(RunArgs),
    /// Closed-form Gaussian barycenter of the config's leaves (JSON on stdout).
    Barycenter(ConfigOnlyArgs),
}

#[derive(Args)]
struct ConfigOnlyArgs {
    #[arg(long)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    /// Unexplained-variance percentage of samples against a Gaussian target.
    Uvp(EvalUvpArgs),
}

#[derive(Args)]
struct EvalUvpArgs {
    /// Samples CSV to evaluate.
    #[arg(long)]
    samples: PathBuf,
    /// Experiment config whose Gaussian-leaf barycenter is the target.
    #[arg(long, conflicts_with = "target")]
    config: Option<PathBuf>,
    /// JSON file with explicit `{"mean": [...], "cov": [[...]]}` target.
    #[arg(long)]
    target: Option<PathBuf>,
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    let mut cfg = ExperimentConfig::parse(&text).map_err(CliError::Config)?;
    if let Ok(seed) = std::env::var("TREEDSB_SEED") {
        let parsed = seed
            .parse()
            .map_err(|_| CliError::Usage(format!("TREEDSB_SEED must be an integer, got `{seed}`")))?;
        cfg.run_seed = parsed;
    }
    Ok(cfg)
}

enum CliError {
    Usage(String),
    Config(ConfigError),
    Runtime(RunError),
}

impl From<RunError> for CliError {
    fn from(e: RunError) -> Self {
        match e {
            RunError::Config(c) => CliError::Config(c),
            other => CliError::Runtime(other),
        }
    }
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::GenData(args) => {
            let cfg = load_config(&args.config)?;
            let n = cmd_gen_data(&cfg, &args.out)?;
            eprintln!("wrote {n} samples to {}", args.out.display());
        }
        Command::Run(args) => {
            let cfg = load_config(&args.config)?;
            let manifest = cmd_run(&cfg, &args.out_dir)?;
            eprintln!(
                "completed {} iterations into {}",
                manifest.records.len(),
                args.out_dir.display()
            );
            if let Some(best) = manifest.best_uvp_percent {
                eprintln!("best unexplained variance: {best:.4}%");
            }
        }
        Command::Oracle(OracleCommand::Sinkhorn(args)) => {
            let cfg = load_config(&args.config)?;
            let report = cmd_oracle_sinkhorn(&cfg, &args.out_dir)?;
            eprintln!(
                "converged in {} iterations, max leaf TV {:.3e}",
                report.iterations, report.final_max_tv
            );
        }
        Command::Oracle(OracleCommand::Barycenter(args)) => {
            let cfg = load_config(&args.config)?;
            let report = cmd_oracle_barycenter(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
        Command::Eval(EvalCommand::Uvp(args)) => {
            let target = match (&args.config, &args.target) {
                (Some(cfg_path), None) => {
                    let cfg = load_config(cfg_path)?;
                    oracle_barycenter_from_config(&cfg)?
                }
                (None, Some(target_path)) => {
                    let text = std::fs::read_to_string(target_path).map_err(|e| {
                        CliError::Usage(format!("cannot read {}: {e}", target_path.display()))
                    })?;
                    let spec: GaussianTargetSpec = serde_json::from_str(&text)
                        .map_err(|e| CliError::Usage(format!("bad target JSON: {e}")))?;
                    gaussian_from_spec(&spec)?
                }
                _ => {
                    return Err(CliError::Usage(
                        "eval uvp needs exactly one of --config or --target".into(),
                    ))
                }
            };
            let report = cmd_eval_uvp(&args.samples, &target)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("serializable"));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Config(e)) => {
            eprintln!("config error: {e}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
