use std::process::ExitCode;

use clap::Parser;
use pltrap_cli::{run, Cli, RunConfig, RunError};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = RunConfig::from_cli(&cli)
        .map_err(RunError::from)
        .and_then(|config| run(&config));
    match outcome {
        Ok(table) => {
            // Study summaries go to standard error so the table stays clean.
            for key in ["fitted_order", "metric"] {
                if let Some(v) = table.metadata.get(key) {
                    eprintln!("{key}: {v}");
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.record());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
