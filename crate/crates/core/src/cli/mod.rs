//! Config-driven experiment runner behind the `levynoise` binary.

pub mod config;
pub mod experiments;
pub mod summary;

pub use config::{ConfigError, ExperimentConfig, ExperimentKind};
pub use experiments::{run, Outcome, RunError};
pub use summary::{Summary, VerdictRow};
