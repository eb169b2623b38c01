use std::net::SocketAddr;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use coach_cli::acceptance::{self, Settings, CRITERIA};
use coach_cli::commands::{self, CliError, CliResult};
use coach_core::log::LogFormat;

#[derive(Parser)]
#[command(name = "coach", version, about = "Train feedback-driven learners and reproduce the desk-scale experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Jsonl,
}

impl From<Format> for LogFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Csv => LogFormat::Csv,
            Format::Jsonl => LogFormat::Jsonl,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one seeded session and export its log.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
    },
    /// Run a range of seeds in parallel.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `a..b` (exclusive) or `a..=b`.
        #[arg(long)]
        seeds: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "jsonl")]
        format: Format,
    },
    /// Summarise the session logs in a directory.
    Report {
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Host a live session over WebSockets.
    Serve {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "127.0.0.1:8080")]
        listen: SocketAddr,
    },
    /// Run an acceptance experiment (or `all`).
    Experiment {
        #[arg(value_parser = experiment_names())]
        name: String,
        /// Seeds for the convergence experiment.
        #[arg(long, default_value_t = 100)]
        seeds: u64,
        /// Cycles for the real-time soak.
        #[arg(long, default_value_t = 10_000)]
        cycles: u64,
    },
}

fn experiment_names() -> Vec<&'static str> {
    let mut names = CRITERIA.to_vec();
    names.push("all");
    names
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match dispatch(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn dispatch(command: Command) -> CliResult<ExitCode> {
    match command {
        Command::Run { config, seed, out, format } => {
            let cfg = commands::load_config(&config)?;
            println!("{}", commands::run(&cfg, seed, &out, format.into())?);
        }
        Command::Sweep { config, seeds, out, format } => {
            let cfg = commands::load_config(&config)?;
            let seeds = commands::parse_seeds(&seeds)?;
            println!("{}", commands::sweep(&cfg, &seeds, &out, format.into())?);
        }
        Command::Report { input } => print!("{}", commands::report(&input)?),
        Command::Serve { config, listen } => commands::serve(&commands::load_config(&config)?, listen)?,
        Command::Experiment { name, seeds, cycles } => {
            let settings = Settings { convergence_seeds: seeds, soak_cycles: cycles, period: Duration::from_millis(33) };
            let outcomes = if name == "all" {
                acceptance::run_all(&settings)
            } else {
                acceptance::run(&name, &settings).ok_or_else(|| CliError::Config(format!("unknown experiment {name}")))?
            };
            for o in &outcomes {
                println!("{o}");
            }
            if outcomes.iter().any(|o| !o.passed) {
                return Ok(ExitCode::from(1));
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
