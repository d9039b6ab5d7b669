//! File formats, configuration and subcommands for the `regen` tool.

pub mod buffers;
pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
pub mod verify;
