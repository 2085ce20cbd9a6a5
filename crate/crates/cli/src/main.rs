mod args;
mod commands;
mod output;

use std::path::Path;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::error::ErrorKind;
use clap::Parser;
use mht_core::MhtError;
use serde::de::DeserializeOwned;
use serde_json::{json, Value};

use args::{Cli, Command, Merge};

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            emit_error(&json!({ "kind": "usage", "message": e.to_string().trim_end() }));
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            emit_error(&error_record(&e));
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let config = match &cli.config {
        Some(path) => Some(read_config(path)?),
        None => None,
    };
    let name = cli.command.name();
    match cli.command {
        Command::Fit(mut a) => {
            fill(&mut a, config.as_ref(), name)?;
            commands::fit(a)
        }
        Command::Simulate(mut a) => {
            fill(&mut a, config.as_ref(), name)?;
            commands::simulate(a)
        }
        Command::Density(mut a) => {
            fill(&mut a, config.as_ref(), name)?;
            commands::curve(a, mht_core::inversion::Target::Density)
        }
        Command::Survival(mut a) => {
            fill(&mut a, config.as_ref(), name)?;
            commands::curve(a, mht_core::inversion::Target::Survival)
        }
        Command::CheckInversion(mut a) => {
            fill(&mut a, config.as_ref(), name)?;
            commands::check_inversion(a)
        }
    }
}

fn read_config(path: &Path) -> Result<Value> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
}

/// A config file is either flat or keyed by subcommand name.
fn fill<T: Merge + DeserializeOwned>(args: &mut T, config: Option<&Value>, command: &str) -> Result<()> {
    let Some(config) = config else {
        return Ok(());
    };
    let section = config.get(command).unwrap_or(config).clone();
    let defaults: T = serde_json::from_value(section).with_context(|| format!("config values for {command}"))?;
    args.merge(defaults);
    Ok(())
}

fn error_record(e: &anyhow::Error) -> Value {
    let message = format!("{e:#}");
    match e.downcast_ref::<MhtError>() {
        Some(MhtError::Parse { line, .. }) => json!({ "kind": "parse", "line": line, "message": message }),
        Some(inner) => json!({ "kind": kind(inner), "message": message }),
        None if e.chain().any(is_io) => {
            json!({ "kind": "io", "message": message })
        }
        None => json!({ "kind": "invalid_argument", "message": message }),
    }
}

fn is_io(e: &(dyn std::error::Error + 'static)) -> bool {
    e.downcast_ref::<std::io::Error>().is_some() || e.downcast_ref::<csv::Error>().is_some_and(csv::Error::is_io_error)
}

fn kind(e: &MhtError) -> &'static str {
    match e {
        MhtError::InvalidArgument(_) => "invalid_argument",
        MhtError::Numerical(_) => "numerical",
        MhtError::Singularity(_) => "singularity",
        MhtError::Parse { .. } => "parse",
        MhtError::Schema(_) => "schema",
        MhtError::Io(_) => "io",
    }
}

fn emit_error(record: &Value) {
    eprintln!("{}", json!({ "error": record }));
}
