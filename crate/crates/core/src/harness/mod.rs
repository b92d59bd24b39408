//! Experiment orchestration: synthetic truth, simulated measurements,
//! filter runs per mode, MAPE evaluation and file output.

pub mod config;
pub mod demo;
pub mod export;
pub mod filter;
pub mod metrics;
pub mod scenario;
pub mod simulate;

use thiserror::Error;

use crate::ctm::CtmError;
use crate::data::DataError;
use crate::fusion::FusionError;
use crate::network::NetworkError;

pub use config::{BoundarySource, Mode, ScenarioConfig, Seeds};
pub use filter::{run_filter, Observations, RunReport};
pub use metrics::{compute_mape, Grid, Mape};
pub use scenario::Scenario;
pub use simulate::{generate_truth, Truth};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Ctm(#[from] CtmError),
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error("{0}")]
    Shape(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Errors caused by bad inputs rather than failures during a run.
    pub fn is_validation(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Network(_) => true,
            HarnessError::Data(e) => !matches!(e, DataError::Io(_)),
            _ => false,
        }
    }
}
