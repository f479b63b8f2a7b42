//! Command-line front end and local HTTP service for the annotation loop.

pub mod commands;
pub mod service;

pub use commands::{run, Cli};
