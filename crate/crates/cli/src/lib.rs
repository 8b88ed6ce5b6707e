//! Library backing the `agh` binary.
//!
//! Each subcommand is a plain function over paths and option structs so that
//! integration tests can drive the exact code the binary runs without
//! spawning processes.

pub mod commands;
pub mod config;
pub mod synth;
