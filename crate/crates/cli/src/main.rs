//! `sum2act` command-line interface.
//!
//! Exit codes: 0 when the episode finished (or the command completed),
//! 1 when an episode ended without finishing, 2 on configuration, input or
//! parse errors.

mod bench;
mod compare;
mod config;
mod replay;
mod run;
mod traces;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use config::FileConfig;

pub const EXIT_FINISHED: u8 = 0;
pub const EXIT_NOT_FINISHED: u8 = 1;
pub const EXIT_INVALID: u8 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "sum2act",
    version,
    about = "Run, benchmark, compare and replay tool-using agent episodes"
)]
struct Cli {
    /// TOML file whose keys mirror the command-line flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run one instruction and write its trace.
    Run(run::RunArgs),
    /// Run every scenario of a directory with one or more methods.
    Bench(bench::BenchArgs),
    /// Judge two trace sets against each other and report win rates.
    Compare(compare::CompareArgs),
    /// Print a trace step by step.
    Replay(replay::ReplayArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() {
                EXIT_INVALID
            } else {
                EXIT_FINISHED
            });
        }
    };
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();

    let file = match cli.config.as_deref().map(FileConfig::load).transpose() {
        Ok(f) => f.unwrap_or_default(),
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_INVALID);
        }
    };
    let result = match &cli.command {
        Command::Run(args) => run::execute(args, &file),
        Command::Bench(args) => bench::execute(args, &file),
        Command::Compare(args) => compare::execute(args, &file),
        Command::Replay(args) => replay::execute(args),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_INVALID)
        }
    }
}
