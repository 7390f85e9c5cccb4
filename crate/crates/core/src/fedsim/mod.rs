//! Federated protocol: client-local training, size-weighted averaging,
//! warmup, one-time mask construction, and masked sparse exchange with
//! byte accounting.

mod aggregate;
mod client;
mod experiment;
mod server;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use aggregate::{aggregate, weighted_average, ClientUpdate};
pub use client::{local_train, ClientState, LocalTrainOutcome};
pub use experiment::{
    build_federation, run_experiment, run_experiment_with, write_records_csv, DataConfig, ExperimentOutput,
    RunConfig, RECORDS_HEADER,
};
pub use server::{Federation, RoundRecord, ServerState};

use crate::data::DataError;
use crate::lrp::{LrpConfig, LrpError};
use crate::metrics::MetricsError;
use crate::nn::NnError;
use crate::pruning::PruningError;

#[derive(Debug, Error)]
pub enum FedError {
    #[error("invalid federation config: {0}")]
    Config(String),
    #[error("aggregation: {0}")]
    Aggregate(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Lrp(#[from] LrpError),
    #[error(transparent)]
    Pruning(#[from] PruningError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("worker pool: {0}")]
    Pool(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Plain FedAvg, no pruning.
    Standard,
    /// Components chosen uniformly at random under the same budget.
    Random,
    /// Least relevant components under the same budget.
    Proposed,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Standard => "standard",
            Strategy::Random => "random",
            Strategy::Proposed => "proposed",
        }
    }

    pub fn prunes(self) -> bool {
        self != Strategy::Standard
    }
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// When clients apply the mask during local training.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientMasking {
    /// After every optimizer step.
    #[default]
    EveryStep,
    /// Once, just before upload.
    AtUpload,
}

/// Protocol settings of one federated run.
#[derive(Debug, Clone, PartialEq)]
pub struct FederationConfig {
    pub clients: usize,
    pub rounds: u32,
    pub local_epochs: usize,
    /// Round at whose end the mask is built.
    pub warmup: u32,
    pub pruning_rate: f64,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub lrp: LrpConfig,
    pub strategy: Strategy,
    pub client_masking: ClientMasking,
}

impl Default for FederationConfig {
    fn default() -> Self {
        Self {
            clients: 4,
            rounds: 20,
            local_epochs: 3,
            warmup: 9,
            pruning_rate: 0.2,
            batch_size: 64,
            learning_rate: 1e-3,
            seed: 42,
            lrp: LrpConfig::default(),
            strategy: Strategy::Proposed,
            client_masking: ClientMasking::EveryStep,
        }
    }
}

impl FederationConfig {
    pub fn validate(&self) -> Result<(), FedError> {
        let fail = |m: String| Err(FedError::Config(m));
        if self.clients == 0 {
            return fail("clients must be >= 1".into());
        }
        if self.rounds == 0 {
            return fail("rounds must be >= 1".into());
        }
        if self.warmup == 0 || self.warmup > self.rounds {
            return fail(format!("warmup must satisfy 1 <= warmup <= rounds ({})", self.rounds));
        }
        if self.local_epochs == 0 {
            return fail("local_epochs must be >= 1".into());
        }
        if !(0.0..1.0).contains(&self.pruning_rate) {
            return fail(format!("pruning_rate must lie in [0, 1), got {}", self.pruning_rate));
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.lrp.epsilon >= 0.0 && self.lrp.epsilon.is_finite()) {
            return fail(format!("lrp epsilon must be >= 0, got {}", self.lrp.epsilon));
        }
        Ok(())
    }
}
