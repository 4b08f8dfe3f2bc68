//! Command implementations behind the `fish` binary. Kept as a library so
//! integration tests drive the same code paths as the CLI.

pub mod cli;
pub mod commands;
pub mod error;
pub mod files;
pub mod jsonl;

pub use error::CliError;
