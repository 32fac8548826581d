//! Command-line front end and HTTP review service for lipogate.

pub mod cli;
pub mod config;
pub mod review;
pub mod service;

pub use cli::{run, Cli};
