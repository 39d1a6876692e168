//! Config-driven runner behind the `lab` binary.

pub mod bundle;
pub mod config;
pub mod runner;

pub use bundle::{execute, write_bundle, Report};
pub use config::{Experiment, ExperimentConfig};
pub use runner::{run, Outcome};
