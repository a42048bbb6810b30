//! Configuration, scenario runs and file output.

pub mod config;
pub mod ks;
pub mod report;
pub mod scenario;

use std::path::PathBuf;

use thiserror::Error;

use crate::equilibrium::FluidError;
use crate::sim::SimError;
use crate::transient::TransientError;

pub use config::{load_config, load_preset, parse_config, ConfigError, ExperimentConfig, Scenario};
pub use ks::{ks_distance, ClassMismatch, KsResult};
pub use report::{emit_fluid_report, FluidReport};
pub use scenario::{run_scenario, ScenarioOutcome};

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILURE: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_NUMERICAL: u8 = 3;
pub const EXIT_PARTIAL: u8 = 4;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Fluid(#[from] FluidError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Transient(#[from] TransientError),
    #[error(transparent)]
    Ks(#[from] ClassMismatch),
    #[error("config has no `scenario`")]
    MissingScenario,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("cannot write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl HarnessError {
    pub fn exit_code(&self) -> u8 {
        match self {
            HarnessError::Config(_) | HarnessError::MissingScenario => EXIT_CONFIG,
            HarnessError::Fluid(FluidError::Model(_)) | HarnessError::Sim(_) => EXIT_CONFIG,
            HarnessError::Fluid(_) | HarnessError::Transient(_) | HarnessError::NonFinite(_) => EXIT_NUMERICAL,
            HarnessError::Ks(_) | HarnessError::Io { .. } => EXIT_FAILURE,
        }
    }
}
