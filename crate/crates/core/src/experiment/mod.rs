//! Config-driven experiment harness: data generation, federated or centralized training,
//! evaluation, trading simulation and communication reports, all writing CSV under one output
//! directory.
//!
//! Every seed used by a run is derived from the master `seed`; seed fields inside the nested
//! sections are overwritten.

mod commands;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{DataError, SignalKind, SyntheticConfig};
use crate::decision::{DecisionError, TradingPolicy};
use crate::federated::{FLConfig, FederatedError};
use crate::nn::{ModelError, ModelTopology, TrainConfig};
use crate::seed;

pub use commands::{
    cmd_evaluate, cmd_generate_data, cmd_report_comm, cmd_simulate, cmd_train, load_datasets,
    prepare_signal, variant_rmse, CommSummaryRow, MetricRow, ModelVariant, SignalSplit,
    SimulationSource, TrainMode,
};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("cannot parse config: {0}")]
    Toml(#[from] toml::de::Error),
    #[error("{0} exists and is not empty; pass --force to overwrite")]
    OutputExists(PathBuf),
    #[error("missing {0}")]
    MissingArtifact(PathBuf),
    #[error("{path}: model topology does not match the config")]
    TopologyMismatch { path: PathBuf },
    #[error("malformed artifact {path}: {reason}")]
    MalformedArtifact { path: PathBuf, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Federated(#[from] FederatedError),
    #[error(transparent)]
    Decision(#[from] DecisionError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = ExperimentError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    #[default]
    Synthetic,
    /// `<csv_dir>/<prosumer_id>/{pv,consumption,ev}.csv`
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub csv_dir: Option<PathBuf>,
    /// Share of each prosumer's windows used for training, taken from the start.
    pub train_fraction: f64,
    pub synthetic: SyntheticConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            source: DataSource::Synthetic,
            csv_dir: None,
            train_fraction: 0.8,
            synthetic: SyntheticConfig::default(),
        }
    }
}

/// Forecaster shape for one signal, with an optional federated schedule overriding the
/// top-level one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SignalConfig {
    pub hidden_sizes: Vec<usize>,
    pub lookback: usize,
    pub horizon: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub federated: Option<FLConfig>,
}

impl SignalConfig {
    pub fn from_topology(t: &ModelTopology) -> Self {
        Self {
            hidden_sizes: t.hidden_sizes.clone(),
            lookback: t.lookback,
            horizon: t.output_size,
            federated: None,
        }
    }

    pub fn topology(&self) -> ModelTopology {
        ModelTopology {
            input_size: 1,
            hidden_sizes: self.hidden_sizes.clone(),
            output_size: self.horizon,
            lookback: self.lookback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SignalsConfig {
    pub pv: SignalConfig,
    pub consumption: SignalConfig,
    pub ev: SignalConfig,
}

impl Default for SignalsConfig {
    fn default() -> Self {
        Self {
            pv: SignalConfig::from_topology(&ModelTopology::model1()),
            consumption: SignalConfig::from_topology(&ModelTopology::model1()),
            ev: SignalConfig::from_topology(&ModelTopology::model2()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CentralizedConfig {
    /// Epochs over the pooled training windows of all prosumers.
    pub epochs: usize,
}

impl Default for CentralizedConfig {
    fn default() -> Self {
        Self { epochs: 25 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    /// Defaults to 2% of mean community consumption over the training span.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deadband_kw: Option<f64>,
    pub steps: usize,
    pub default_policy: TradingPolicy,
    pub policies: BTreeMap<String, TradingPolicy>,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        Self {
            deadband_kw: None,
            steps: 96,
            default_policy: TradingPolicy::default(),
            policies: BTreeMap::new(),
        }
    }
}

impl DecisionConfig {
    pub fn policy_for(&self, prosumer_id: &str) -> TradingPolicy {
        self.policies
            .get(prosumer_id)
            .copied()
            .unwrap_or(self.default_policy)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    pub data: DataConfig,
    pub signals: SignalsConfig,
    pub federated: FLConfig,
    pub centralized: CentralizedConfig,
    pub decision: DecisionConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl ExperimentConfig {
    /// 18 prosumers (5 with EVs), Model1 for PV and consumption, Model2 for EV, 25 rounds of
    /// 5 clients with 8 local and 8 personalization epochs.
    pub fn full() -> Self {
        Self {
            seed: 7,
            out_dir: PathBuf::from("out"),
            data: DataConfig::default(),
            signals: SignalsConfig::default(),
            federated: FLConfig {
                evaluate_each_round: true,
                ..FLConfig::standard()
            },
            centralized: CentralizedConfig::default(),
            decision: DecisionConfig::default(),
        }
    }

    /// Reduced preset for CI: 32-unit single-width layers, 10 rounds and about a week of data.
    pub fn ci() -> Self {
        let mut cfg = Self::full();
        cfg.data.synthetic.days = 6;
        cfg.data.synthetic.ev_days = 2;
        for s in [&mut cfg.signals.pv, &mut cfg.signals.consumption, &mut cfg.signals.ev] {
            s.hidden_sizes = vec![32, 32];
        }
        cfg.federated.rounds = 10;
        cfg.federated.train_cfg.learning_rate = 0.005;
        cfg.federated.personalization_learning_rate = Some(0.0005);
        cfg.centralized.epochs = 10;
        cfg
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always representable as TOML")
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(ExperimentError::Config(m));
        if !(self.data.train_fraction > 0.0 && self.data.train_fraction < 1.0) {
            return bad(format!("train_fraction {} outside (0, 1)", self.data.train_fraction));
        }
        if self.data.source == DataSource::Csv && self.data.csv_dir.is_none() {
            return bad("csv source needs data.csv_dir".into());
        }
        if self.data.source == DataSource::Synthetic {
            self.data.synthetic.validate()?;
        }
        for kind in SignalKind::ALL {
            self.signal(kind).topology().validate()?;
            self.fl_config(kind).validate()?;
        }
        if self.signals.pv.horizon != 1 || self.signals.consumption.horizon != 1 {
            return bad("pv and consumption forecasters predict exactly one step".into());
        }
        if self.centralized.epochs == 0 {
            return bad("centralized.epochs must be positive".into());
        }
        if matches!(self.decision.deadband_kw, Some(d) if !(d >= 0.0)) {
            return bad("decision.deadband_kw must be non-negative".into());
        }
        self.decision.default_policy.validate()?;
        for p in self.decision.policies.values() {
            p.validate()?;
        }
        Ok(())
    }

    pub fn signal(&self, kind: SignalKind) -> &SignalConfig {
        match kind {
            SignalKind::Pv => &self.signals.pv,
            SignalKind::Consumption => &self.signals.consumption,
            SignalKind::Ev => &self.signals.ev,
        }
    }

    fn signal_index(kind: SignalKind) -> u64 {
        match kind {
            SignalKind::Pv => 0,
            SignalKind::Consumption => 1,
            SignalKind::Ev => 2,
        }
    }

    /// Federated schedule for one signal, with seeds derived from the master seed.
    pub fn fl_config(&self, kind: SignalKind) -> FLConfig {
        let s = Self::signal_index(kind);
        let mut fl = self
            .signal(kind)
            .federated
            .clone()
            .unwrap_or_else(|| self.federated.clone());
        fl.selection_seed = seed::derive(self.seed, &[10, s]);
        fl.train_cfg.seed = seed::derive(self.seed, &[11, s]);
        fl
    }

    /// Local fine-tuning settings for one prosumer.
    pub fn personalization_config(&self, kind: SignalKind, prosumer_id: &str) -> TrainConfig {
        let fl = self.fl_config(kind);
        TrainConfig {
            epochs: fl.personalization_epochs,
            learning_rate: fl
                .personalization_learning_rate
                .unwrap_or(fl.train_cfg.learning_rate),
            seed: seed::derive(
                self.seed,
                &[12, Self::signal_index(kind), seed::hash_str(prosumer_id)],
            ),
            ..fl.train_cfg
        }
    }

    /// Pooled training settings; the model starts from the same initialization as the
    /// federated run.
    pub fn centralized_config(&self, kind: SignalKind) -> TrainConfig {
        TrainConfig {
            epochs: self.centralized.epochs,
            seed: seed::derive(self.seed, &[13, Self::signal_index(kind)]),
            ..self.fl_config(kind).train_cfg
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            seed: seed::derive(self.seed, &[1]),
            ..self.data.synthetic.clone()
        }
    }

    pub fn data_dir(&self) -> PathBuf {
        match (&self.data.source, &self.data.csv_dir) {
            (DataSource::Csv, Some(dir)) => dir.clone(),
            _ => self.out_dir.join("data"),
        }
    }

    /// Run directories are named after the seed so that reruns overwrite byte-identical files.
    pub fn run_dir(&self) -> PathBuf {
        self.out_dir.join("run").join(format!("seed{}", self.seed))
    }

    pub fn signal_dir(&self, kind: SignalKind) -> PathBuf {
        self.run_dir().join(kind.file_stem())
    }
}
