use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

mod commands;
mod config;

use config::JobConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("numerical error: {0}")]
    Numerical(String),
    #[error("i/o error: {0}")]
    Io(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 1,
            CliError::Numerical(_) | CliError::Io(_) => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "clf-forge", version, about = "Global control Lyapunov functions computed pointwise")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build the local CLF and search admissible levels.
    LocalClf(Common),
    /// Evaluate the global CLF on a grid.
    Grid(Common),
    /// Evaluate the global CLF (and ball-target values) at listed states.
    Eval(Common),
    /// Closed-loop sampled-data simulation, optionally Monte Carlo.
    Mpc(Common),
    /// Export one characteristic with its Hamiltonian drift.
    CharTrace(Common),
}

#[derive(Debug, Args)]
struct Common {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; CLF_FORGE_WORKERS takes precedence.
    #[arg(long)]
    workers: Option<usize>,
}

fn worker_count(flag: Option<usize>, cfg: Option<usize>) -> Result<usize, CliError> {
    let env = match std::env::var("CLF_FORGE_WORKERS") {
        Ok(s) if !s.trim().is_empty() => Some(
            s.trim().parse::<usize>().map_err(|_| CliError::Config(format!("CLF_FORGE_WORKERS is not a count: {s:?}")))?,
        ),
        _ => None,
    };
    let k = env.or(flag).or(cfg).unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if k == 0 {
        return Err(CliError::Config("worker count must be positive".into()));
    }
    Ok(k)
}

fn run(cli: Cli) -> Result<(), CliError> {
    let (command, common) = match cli.command {
        Command::LocalClf(c) => (commands::Kind::LocalClf, c),
        Command::Grid(c) => (commands::Kind::Grid, c),
        Command::Eval(c) => (commands::Kind::Eval, c),
        Command::Mpc(c) => (commands::Kind::Mpc, c),
        Command::CharTrace(c) => (commands::Kind::CharTrace, c),
    };
    let mut cfg = JobConfig::load(&common.config)?;
    if let Some(out) = common.out {
        cfg.out = out;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    let workers = worker_count(common.workers, cfg.workers)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Io(format!("cannot start worker pool: {e}")))?;
    let files = pool.install(|| commands::execute(command, &cfg))?;
    commands::write_all(&cfg.out, &files)?;
    for (name, _) in &files {
        println!("{}", cfg.out.join(name).display());
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("clf-forge: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
