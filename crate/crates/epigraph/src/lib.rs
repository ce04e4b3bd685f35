//! File formats, scenario configs and the `epigraph` command line on top of
//! `epigraph-core`.

pub mod commands;
pub mod config;
pub mod error;
pub mod io;
pub mod plot;
pub mod scenario;

pub use commands::{Format, Options};
pub use error::{CliError, CliResult};
