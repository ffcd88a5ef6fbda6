//! Federated edge learning: random client selection, local training, weight averaging, final
//! broadcast and per-prosumer personalization, with byte accounting for every exchange.

mod aggregate;
mod ledger;
mod run;
mod selection;

use serde::{Deserialize, Serialize};

use crate::nn::{ModelError, ParamVector, TrainConfig};

pub use aggregate::fedavg;
pub use ledger::{
    centralized_upload_bytes, comm_report, param_bytes, CommLedger, CommReport, CommRow, Crossover,
    RoundBytes, BYTES_PER_SAMPLE,
};
pub use run::{client_seed, collection_minutes, personalize, run_federated, run_federated_with_eval, FederatedRun};
pub use selection::select_clients;

#[derive(Debug, thiserror::Error)]
pub enum FederatedError {
    #[error("cannot select {k} clients from {available}")]
    NotEnoughClients { k: usize, available: usize },
    #[error("no client updates to aggregate")]
    NoUpdates,
    #[error("client {0} sent parameters for a different topology")]
    TopologyMismatch(String),
    #[error("sample-count weighting needs a positive total sample count")]
    ZeroSamples,
    #[error("client {0} has no training data")]
    EmptyClient(String),
    #[error("invalid federated config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T, E = FederatedError> = std::result::Result<T, E>;

/// How client parameter vectors are weighted when averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Weighting {
    #[default]
    Uniform,
    BySampleCount,
}

/// How local-training seeds are derived for the selected clients.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClientSeeding {
    /// Seed from (selection seed, prosumer id, round): clients shuffle independently.
    #[default]
    PerClient,
    /// Seed from (selection seed, round) only: every client in a round shares one shuffle order.
    Shared,
}

/// Stop once the mean local loss fails to improve by `min_delta` for `patience` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    pub patience: usize,
    pub min_delta: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            patience: 5,
            min_delta: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FLConfig {
    pub rounds: usize,
    pub clients_per_round: usize,
    pub local_epochs: usize,
    pub personalization_epochs: usize,
    /// Fine-tuning step size; `None` reuses `train_cfg.learning_rate`.
    pub personalization_learning_rate: Option<f64>,
    pub train_cfg: TrainConfig,
    pub selection_seed: u64,
    pub weighting: Weighting,
    pub client_seeding: ClientSeeding,
    /// Evaluate the global model on held-out data after every round.
    pub evaluate_each_round: bool,
    pub early_stop: Option<EarlyStop>,
}

impl Default for FLConfig {
    fn default() -> Self {
        Self::standard()
    }
}

impl FLConfig {
    /// 25 rounds of 5 random prosumers, 8 local epochs, 8 personalization epochs.
    pub fn standard() -> Self {
        Self {
            rounds: 25,
            clients_per_round: 5,
            local_epochs: 8,
            personalization_epochs: 8,
            personalization_learning_rate: None,
            train_cfg: TrainConfig::default(),
            selection_seed: 0,
            weighting: Weighting::Uniform,
            client_seeding: ClientSeeding::PerClient,
            evaluate_each_round: false,
            early_stop: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clients_per_round == 0 {
            return Err(FederatedError::InvalidConfig(
                "clients_per_round must be positive".into(),
            ));
        }
        if self.local_epochs == 0 {
            return Err(FederatedError::InvalidConfig(
                "local_epochs must be positive".into(),
            ));
        }
        if matches!(self.personalization_learning_rate, Some(lr) if !(lr > 0.0)) {
            return Err(FederatedError::InvalidConfig(
                "personalization_learning_rate must be positive".into(),
            ));
        }
        self.train_cfg.validate()?;
        Ok(())
    }
}

/// Parameters returned by one client after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpdate {
    pub prosumer_id: String,
    pub params: ParamVector,
    pub n_samples: usize,
    pub local_loss: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundRecord {
    /// 1-based.
    pub round_index: usize,
    pub selected: Vec<String>,
    pub mean_local_loss: f64,
    pub global_eval_rmse: Option<f64>,
    pub bytes_up: u64,
    pub bytes_down: u64,
}
