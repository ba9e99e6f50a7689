mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Flags};

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl From<genp_amp::Error> for CliError {
    fn from(e: genp_amp::Error) -> Self {
        match e {
            genp_amp::Error::InvalidArgument(m) => CliError::Config(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

fn load_flags(cli: &Cli) -> Result<Flags, CliError> {
    let Some(path) = cli.flags.config.as_ref() else {
        return Ok(cli.flags.clone());
    };
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let file: Flags = serde_json::from_str(&text)
        .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    Ok(cli.flags.clone().merged_with(file))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    let cli = Cli::parse();
    let result = load_flags(&cli).and_then(|flags| {
        if let Some(w) = flags.workers {
            rayon::ThreadPoolBuilder::new()
                .num_threads(w)
                .build_global()
                .map_err(|e| CliError::Config(format!("worker pool: {e}")))?;
        }
        commands::dispatch(cli.command, &flags)
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Config(m)) => {
            log::error!("bad configuration: {m}");
            ExitCode::from(2)
        }
        Err(CliError::Numerical(m)) => {
            log::error!("numerical failure: {m}");
            ExitCode::from(3)
        }
    }
}
