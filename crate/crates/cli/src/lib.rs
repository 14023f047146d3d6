//! Manifest parsing and command implementations behind the `sgspde` binary.

pub mod commands;
pub mod error;
pub mod manifest;
pub mod output;

pub use error::{exit, CliError, CliResult};
pub use manifest::{LoadedRun, RunManifest};
