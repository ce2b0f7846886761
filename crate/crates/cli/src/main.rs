//! `noniid-qlearn`: runs one experiment and writes a result record.
//!
//! Exit codes: 0 when every check passes, 2 when a run completes but a check
//! fails, 1 for configuration and runtime errors.

mod config;
mod error;
mod output;
mod run;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use config::{load_config, ExperimentConfig, Settings, SubcommandId};
use error::CliResult;
use output::{unix_ms, ResultEnvelope, Timestamps};

#[derive(Debug, Parser)]
#[command(name = "noniid-qlearn", version, about = "Learning from non-i.i.d. quantum data: experiments and bound checks")]
struct Cli {
    /// Experiment to run; may instead be set as `subcommand` in the config file.
    #[arg(value_enum, id = "command")]
    command: Option<SubcommandId>,
    /// TOML file with default settings; command-line flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    settings: Settings,
}

/// Returns whether every check passed.
fn execute(cli: Cli) -> CliResult<bool> {
    let base = match &cli.config {
        Some(path) => load_config(path)?,
        None => Settings::default(),
    };
    let top = Settings { subcommand: cli.command, ..cli.settings };
    let cfg = ExperimentConfig::resolve(base.overlay(top))?;
    let started_unix_ms = unix_ms();
    let record = run::run(&cfg)?;
    let timestamps = Timestamps { started_unix_ms, finished_unix_ms: unix_ms() };
    let envelope = ResultEnvelope::new(&cfg, &record, timestamps)?;
    match &cfg.out {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            envelope.write(cfg.format, &mut w)?;
            w.flush()?;
        }
        None => envelope.write(cfg.format, io::stdout().lock())?,
    }
    Ok(envelope.pass)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    noniid_qlearn::rng::configure_threads_from_env();
    match execute(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => {
            eprintln!("noniid-qlearn: a reported check failed");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("noniid-qlearn: {e}");
            ExitCode::from(1)
        }
    }
}
