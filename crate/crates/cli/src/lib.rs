//! Configuration, result files, subcommands and the acceptance suite behind
//! the `erwlab` command-line tool.

pub mod commands;
pub mod config;
pub mod record;
pub mod verify;
