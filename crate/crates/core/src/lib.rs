//! Simulator for a prosumer community group (PCG): per-signal load forecasting trained with
//! federated edge learning plus local personalization, a two-level energy trading decision
//! process driven by those forecasts, and communication accounting for federated versus
//! centralized training.
//!
//! Runnable walkthroughs live under `examples/`:
//!
//! ```bash
//! cargo run --example generate_data
//! cargo run --example federated_pcg
//! cargo run --example trading_day
//! ```

pub mod data;
pub mod decision;
pub mod experiment;
pub mod federated;
pub mod nn;
pub mod seed;

pub use data::{
    NormalizationParams, ProsumerDataset, SignalKind, SyntheticConfig, TimeSeries, WindowedDataset,
};
pub use decision::{
    AggregatorDecision, DecisionKind, FinalTrade, ForecastBundle, ProsumerProfile, ProsumerResponse,
    TradingPolicy,
};
pub use federated::{ClientUpdate, CommLedger, FLConfig, RoundRecord, Weighting};
pub use nn::{ModelTopology, ParamVector, TrainConfig};
