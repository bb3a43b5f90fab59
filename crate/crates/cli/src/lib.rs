//! Command implementations behind the `nsfemdg` binary.

pub mod commands;
pub mod config;
