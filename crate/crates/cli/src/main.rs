//! `sparsalloc` experiment runner.
//!
//! Exit codes: 0 success, 1 I/O or format error, 2 usage error, 3 domain
//! error, 4 validation failure. `SPARSALLOC_THREADS` caps worker threads.

mod args;
mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use args::{overlay, Cli, Command};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("validation failed: {0}")]
    Validation(String),

    #[error(transparent)]
    Core(#[from] sparsalloc::Error),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        use sparsalloc::Error as E;
        match self {
            CliError::Usage(_) => 2,
            CliError::Validation(_) => 4,
            CliError::Core(E::Domain(_) | E::Shape(_) | E::Size(_)) => 3,
            _ => 1,
        }
    }
}

fn configure_threads() -> Result<(), CliError> {
    let Ok(raw) = std::env::var("SPARSALLOC_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::Usage(format!("SPARSALLOC_THREADS must be a positive integer, got '{raw}'")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .map_err(|e| CliError::Usage(e.to_string()))
}

fn run(cli: Cli) -> Result<(), CliError> {
    configure_threads()?;
    let cfg = cli.config.as_deref();
    match cli.command {
        Command::GenNet(a) => commands::gen_net(overlay(a, cfg)?),
        Command::GenCalib(a) => commands::gen_calib(overlay(a, cfg)?),
        Command::Search(a) => commands::search(overlay(a, cfg)?),
        Command::Prune(a) => commands::prune(overlay(a, cfg)?),
        Command::Validate(a) => commands::validate_cmd(overlay(a, cfg)?),
        Command::StepAblation(a) => commands::step_ablation_cmd(overlay(a, cfg)?),
        Command::RandomSearch(a) => commands::random_search_cmd(overlay(a, cfg)?),
        Command::Compare(a) => commands::compare(overlay(a, cfg)?),
        Command::Report(a) => commands::report(overlay(a, cfg)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
