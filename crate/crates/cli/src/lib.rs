//! Configuration loading and command implementations for the solver CLI.

pub mod commands;
pub mod config;
