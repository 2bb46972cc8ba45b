//! Command-line workflows for the Bayesian PgW shape parameter signal test:
//! cohort simulation, posterior fitting, single-cohort testing, grid tuning
//! and report rendering.

pub mod args;
pub mod commands;
pub mod config;
pub mod io;
pub mod report;
pub mod store;

pub use commands::{execute, Outcome};
pub use config::{CommandName, PriorName, RunConfig};
