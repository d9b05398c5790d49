//! Command-line front end: config parsing, checkpoints and the subcommands.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod output;
