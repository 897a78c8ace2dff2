//! Command-line simulator for kernel-based bandit convex optimization:
//! configuration, seeded parallel runs, trace output and property checks.

pub mod config;
pub mod error;
pub mod output;
pub mod runner;
pub mod verify;

pub use config::ExperimentConfig;
pub use error::{HarnessError, Result};
