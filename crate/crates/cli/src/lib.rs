//! Command-line driver: file formats, flat configuration and subcommands.

pub mod commands;
pub mod config;
pub mod io;
