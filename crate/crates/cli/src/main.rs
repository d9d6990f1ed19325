use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};

mod artifacts;
mod commands;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("check failed: {0}")]
    CheckFailed(String),
    #[error(transparent)]
    Engine(glancer::Error),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    pub fn from_json(e: serde_json::Error) -> Self {
        CliError::Io(e.to_string())
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }
}

impl From<glancer::Error> for CliError {
    fn from(e: glancer::Error) -> Self {
        match e {
            glancer::Error::Config(m) => CliError::Config(m),
            other => CliError::Engine(other),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Command {
    Trace,
    Classify,
    GlideStep,
    VerifyTransport,
    Gcc,
    QuasiNormal,
    Continuity,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::Trace => "trace",
            Command::Classify => "classify",
            Command::GlideStep => "glide-step",
            Command::VerifyTransport => "verify-transport",
            Command::Gcc => "gcc",
            Command::QuasiNormal => "quasi-normal",
            Command::Continuity => "continuity",
        }
    }
}

/// Trace generalized bicharacteristics and run the verification checks on a
/// scenario file. Exit status: 0 success, 1 failed check, 2 usage or config error.
#[derive(Debug, Parser)]
#[command(name = "glancer", version)]
pub struct Cli {
    #[arg(value_enum)]
    pub command: Command,
    /// Scenario file (TOML, `schema = 1`).
    #[arg(long)]
    pub scenario: PathBuf,
    /// Output directory for artifacts.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Integrator step in `s` (overrides the scenario's [integrator] h).
    #[arg(long)]
    pub h: Option<f64>,
    /// Time horizon |t - t0|.
    #[arg(long)]
    pub t_horizon: Option<f64>,
    #[arg(long)]
    pub delta: Option<f64>,
    #[arg(long)]
    pub eps: Option<f64>,
    /// Fail (exit 1) when the command's error measure exceeds this.
    #[arg(long)]
    pub tolerance: Option<f64>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads for batch commands (default: available parallelism).
    #[arg(long)]
    pub workers: Option<usize>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("GLANCER_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let workers = cli.workers;
    match glancer::par::with_workers(workers, || commands::run(&cli)) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("glancer {}: {e}", cli.command.name());
            ExitCode::from(e.exit_code())
        }
    }
}
