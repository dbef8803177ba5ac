mod analyze;
mod report;
mod synth;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use shda_core::{Error, ErrorKind};

/// Synthesize domains, train transfer models, and analyze the results.
#[derive(Parser, Debug)]
#[command(name = "shda", version, about)]
struct Cli {
    /// Root seed; overrides the seed in a config file.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,

    /// Worker threads for independent trials.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    jobs: u64,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a domain file and its sidecar.
    Synth(synth::SynthArgs),
    /// Run one task config.
    Run(RunArgs),
    /// Expand a suite config and run every task.
    Suite(RunArgs),
    /// Recompute reports from a previous run's outputs.
    Analyze(analyze::AnalyzeArgs),
}

#[derive(Args, Debug, Clone)]
pub struct RunArgs {
    /// Task or suite config (TOML).
    pub config: PathBuf,

    /// KTF iterations to snapshot, e.g. `1,200,400,600`.
    #[arg(long, value_delimiter = ',')]
    pub checkpoints: Vec<usize>,

    /// Save each trial's final model.
    #[arg(long)]
    pub save_models: bool,

    /// Save each trial's source and split target domains.
    #[arg(long)]
    pub save_data: bool,

    /// Dump final-model embeddings of every trial.
    #[arg(long)]
    pub embeddings: bool,
}

/// Fault of the command line itself (clap reports its own errors with 2).
const EXIT_USAGE: u8 = 2;

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Io => 1,
        ErrorKind::Config => 3,
        ErrorKind::DataFormat => 4,
        ErrorKind::Numerical => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let jobs = cli.jobs as usize;
    let result = match &cli.command {
        Command::Synth(a) => synth::run(a, cli.seed.unwrap_or(0), &cli.out),
        Command::Run(a) => report::run_task_command(a, cli.seed, &cli.out, jobs),
        Command::Suite(a) => report::run_suite_command(a, cli.seed, &cli.out, jobs),
        Command::Analyze(a) => analyze::run(a, &cli.out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(EXIT_USAGE)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
        Err(CliError::PartialFailure(n)) => {
            eprintln!("error: {n} task(s) failed; see manifest.json");
            ExitCode::from(6)
        }
    }
}

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    /// Some suite tasks failed; the rest were written.
    PartialFailure(usize),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

pub type CliResult<T> = Result<T, CliError>;
