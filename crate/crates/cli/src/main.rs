//! Command-line driver: data generation, fitting, rollout, evaluation,
//! spectrum export and schedule inspection.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use serde_json::json;

use commands::RunContext;
use config::{ConfigError, RunConfig};
use spectral_refiner::exec::with_jobs;
use spectral_refiner::Exec;

const LOG_ENV: &str = "SPECTRALREFINER_LOG";

#[derive(Debug, Parser)]
#[command(name = "spectral-refiner", version, about = "Spectral-space blurring diffusion refinement for PDE surrogates")]
struct Cli {
    /// JSON run configuration; missing keys take defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; overrides `seed` in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for per-trajectory work (defaults to all cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Config override as a dotted KEY=VALUE; VALUE is parsed as JSON when possible.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate trajectories and write them with a manifest and split.
    Generate,
    /// Fit the per-mode linear predictor on the training split.
    Fit,
    /// Roll the model out on the test split.
    Rollout,
    /// Score test-split rollouts and write metrics.csv and metrics.json.
    Eval,
    /// Export band power spectra of test-split rollouts against the truth.
    Spectrum {
        /// Trajectory files to analyse instead of the test split.
        #[arg(long = "input")]
        inputs: Vec<PathBuf>,
    },
    /// Dump the schedule coefficients for representative modes.
    Schedule,
    /// Print the JSON schema of the run configuration.
    ConfigSchema,
}

fn run(cli: Cli) -> Result<()> {
    if let Command::ConfigSchema = cli.command {
        print!("{}", config::SCHEMA);
        return Ok(());
    }
    let config = RunConfig::load(cli.config.as_deref(), &cli.overrides, cli.seed)?;
    std::fs::create_dir_all(&cli.out)?;
    let ctx = RunContext {
        config_hash: config.hash(),
        config,
        out: cli.out,
        exec: if cli.jobs == Some(1) { Exec::Sequential } else { Exec::default() },
    };
    log::info!("config hash {}", ctx.config_hash);
    with_jobs(cli.jobs, || match &cli.command {
        Command::Generate => commands::generate(&ctx),
        Command::Fit => commands::fit(&ctx),
        Command::Rollout => commands::rollout_cmd(&ctx),
        Command::Eval => commands::eval(&ctx),
        Command::Spectrum { inputs } => commands::spectrum(&ctx, inputs),
        Command::Schedule => commands::schedule(&ctx),
        Command::ConfigSchema => unreachable!(),
    })
}

fn error_kind(err: &anyhow::Error) -> &'static str {
    if err.downcast_ref::<ConfigError>().is_some() {
        return "config";
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<spectral_refiner::Error>() {
            return e.kind();
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return "io";
        }
        if cause.downcast_ref::<serde_json::Error>().is_some() {
            return "json";
        }
    }
    "runtime"
}

fn report(kind: &str, message: String) {
    eprintln!("{}", json!({ "error": { "kind": kind, "message": message } }));
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or(LOG_ENV, "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report("usage", e.to_string().trim_end().to_string());
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let kind = error_kind(&err);
            report(kind, format!("{err:#}"));
            ExitCode::from(if kind == "config" { 2 } else { 1 })
        }
    }
}
