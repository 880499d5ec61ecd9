//! Command-line front end for the `pltrap` integrators: argument handling,
//! the right-hand-side expression language and table output.

pub mod config;
pub mod expr;
pub mod output;
pub mod run;

pub use config::{Cli, ConfigError, RunConfig};
pub use run::{compute, run, RunError};
