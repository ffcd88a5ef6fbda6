//! Two-level trading decisions: the aggregator proposes an action from community forecasts,
//! prosumers answer with their own surplus and commitments, and the aggregator settles the
//! trade internally first and externally for whatever is left.

mod horizon;

use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::data::DataError;
use crate::nn::ModelError;

pub use horizon::{
    default_deadband, simulate_trading_horizon, ForecastMode, ProsumerModels, ProsumerProfile,
    SignalModel, StepLog, TradingLog, TradingSummary, DEFAULT_DEADBAND_FRACTION, INTERVAL_MINUTES,
};

/// Allocations smaller than this are treated as rounding noise.
pub const RESIDUAL_GUARD_KW: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum DecisionError {
    #[error("prosumer {id}: {reason}")]
    InconsistentResponse { id: String, reason: String },
    #[error("duplicate response from {0}")]
    DuplicateResponse(String),
    #[error("invalid trading policy: {0}")]
    InvalidPolicy(String),
    #[error("prosumer {id} has no {signal} data for step {step}")]
    HorizonExceedsData { id: String, signal: String, step: usize },
    #[error("series are not aligned: {0}")]
    Misaligned(String),
    #[error("no {signal} model for prosumer {id}")]
    MissingModel { id: String, signal: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = DecisionError> = std::result::Result<T, E>;

/// Community-level forecast for one future interval, in kW averaged over the interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastBundle {
    pub interval_start: DateTime<Utc>,
    pub interval_minutes: u32,
    pub predicted_production_kw: f64,
    pub predicted_consumption_kw: f64,
    pub predicted_v2g_available_kw: f64,
}

impl ForecastBundle {
    pub fn net_kw(&self) -> f64 {
        self.predicted_production_kw - self.predicted_consumption_kw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum DecisionKind {
    Sell,
    Buy,
    RegulateV2G,
    Balanced,
}

impl DecisionKind {
    pub const ALL: [DecisionKind; 4] = [Self::Sell, Self::Buy, Self::RegulateV2G, Self::Balanced];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Sell => "sell",
            Self::Buy => "buy",
            Self::RegulateV2G => "regulate_v2g",
            Self::Balanced => "balanced",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AggregatorDecision {
    pub kind: DecisionKind,
    /// |production - consumption| at decision time, for every kind.
    pub magnitude_kw: f64,
}

impl AggregatorDecision {
    /// Net community position the decision plans for: positive for export.
    pub fn signed_kw(&self, net_kw: f64) -> f64 {
        match self.kind {
            DecisionKind::Sell => self.magnitude_kw,
            DecisionKind::Buy | DecisionKind::RegulateV2G => -self.magnitude_kw,
            DecisionKind::Balanced => net_kw,
        }
    }

    fn requests_surplus(&self) -> bool {
        matches!(self.kind, DecisionKind::Sell | DecisionKind::RegulateV2G)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyKind {
    /// Committed surplus is matched against community shortages first.
    Altruistic,
    /// Committed surplus is matched only after altruistic surplus runs out.
    Profit,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TradingPolicy {
    pub kind: PolicyKind,
    pub commit_fraction: f64,
    pub reserve_kw: f64,
}

impl Default for TradingPolicy {
    fn default() -> Self {
        Self {
            kind: PolicyKind::Altruistic,
            commit_fraction: 1.0,
            reserve_kw: 0.0,
        }
    }
}

impl TradingPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.commit_fraction) {
            return Err(DecisionError::InvalidPolicy(format!(
                "commit_fraction {} outside [0, 1]",
                self.commit_fraction
            )));
        }
        if !(self.reserve_kw >= 0.0 && self.reserve_kw.is_finite()) {
            return Err(DecisionError::InvalidPolicy(format!(
                "reserve_kw {} must be non-negative",
                self.reserve_kw
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsumerResponse {
    pub prosumer_id: String,
    /// Negative for a shortage.
    pub predicted_surplus_kw: f64,
    pub committed_kw: f64,
    pub policy: TradingPolicy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TradeKind {
    SellExternal,
    BuyExternal,
    InternalBalance,
    V2GRegulation,
}

impl TradeKind {
    pub const ALL: [TradeKind; 4] = [
        Self::SellExternal,
        Self::BuyExternal,
        Self::InternalBalance,
        Self::V2GRegulation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::SellExternal => "sell_external",
            Self::BuyExternal => "buy_external",
            Self::InternalBalance => "internal_balance",
            Self::V2GRegulation => "v2g_regulation",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FinalTrade {
    pub kind: TradeKind,
    /// Quantity sold or bought outside the community, never negative; direction is in `kind`.
    pub external_kw: f64,
    /// Positive for energy supplied to the pool, negative for energy received.
    pub internal_transfers: BTreeMap<String, f64>,
    pub v2g_dispatch_kw: f64,
}

impl FinalTrade {
    /// External flow with sales positive and purchases negative.
    pub fn signed_external_kw(&self) -> f64 {
        match self.kind {
            TradeKind::BuyExternal => -self.external_kw,
            TradeKind::SellExternal => self.external_kw,
            _ => 0.0,
        }
    }
}

/// Preliminary action from the community-level forecast. A negative deadband acts as zero.
pub fn aggregator_preliminary(forecast: &ForecastBundle, deadband_kw: f64) -> AggregatorDecision {
    let deadband = deadband_kw.max(0.0);
    let d = forecast.net_kw();
    let magnitude_kw = d.abs();
    let kind = if magnitude_kw <= deadband {
        DecisionKind::Balanced
    } else if d > 0.0 {
        DecisionKind::Sell
    } else if magnitude_kw <= forecast.predicted_v2g_available_kw {
        DecisionKind::RegulateV2G
    } else {
        DecisionKind::Buy
    };
    AggregatorDecision { kind, magnitude_kw }
}

/// A prosumer's answer to the aggregator's request, from its own short-term forecasts.
pub fn prosumer_local_decision(
    prosumer_id: &str,
    local_pv_forecast: f64,
    local_ev_forecast: f64,
    local_consumption_forecast: f64,
    policy: TradingPolicy,
    request: &AggregatorDecision,
) -> ProsumerResponse {
    let surplus =
        local_pv_forecast - local_consumption_forecast - local_ev_forecast - policy.reserve_kw;
    let committed = if request.requests_surplus() && surplus > 0.0 {
        policy.commit_fraction * surplus
    } else {
        0.0
    };
    ProsumerResponse {
        prosumer_id: prosumer_id.to_string(),
        predicted_surplus_kw: surplus,
        committed_kw: committed,
        policy,
    }
}

fn check_response(r: &ProsumerResponse) -> Result<()> {
    let fail = |reason: &str| {
        Err(DecisionError::InconsistentResponse {
            id: r.prosumer_id.clone(),
            reason: reason.to_string(),
        })
    };
    if !r.predicted_surplus_kw.is_finite() || !r.committed_kw.is_finite() {
        return fail("non-finite value");
    }
    if r.committed_kw < 0.0 {
        return fail("negative commitment");
    }
    if r.committed_kw > 0.0 && r.predicted_surplus_kw <= 0.0 {
        return fail("commitment without surplus");
    }
    if r.committed_kw > r.predicted_surplus_kw.max(0.0) {
        return fail("commitment exceeds surplus");
    }
    Ok(())
}

/// Settles one interval. Shortages are covered pro-rata from altruistic commitments, then from
/// profit commitments; leftover commitments are sold, leftover shortage is covered by V2G when
/// the aggregator asked for it and bought otherwise.
pub fn finalize_trade(
    preliminary: &AggregatorDecision,
    responses: &[ProsumerResponse],
) -> Result<FinalTrade> {
    let mut ordered: Vec<&ProsumerResponse> = responses.iter().collect();
    ordered.sort_by(|a, b| a.prosumer_id.cmp(&b.prosumer_id));
    for pair in ordered.windows(2) {
        if pair[0].prosumer_id == pair[1].prosumer_id {
            return Err(DecisionError::DuplicateResponse(pair[0].prosumer_id.clone()));
        }
    }
    for r in &ordered {
        check_response(r)?;
    }

    let tier_total = |kind: PolicyKind| -> f64 {
        ordered
            .iter()
            .filter(|r| r.policy.kind == kind)
            .map(|r| r.committed_kw)
            .sum()
    };
    let shortage_of = |r: &ProsumerResponse| (-r.predicted_surplus_kw).max(0.0);
    let shortage: f64 = ordered.iter().map(|r| shortage_of(r)).sum();
    let altruistic = tier_total(PolicyKind::Altruistic);
    let profit = tier_total(PolicyKind::Profit);
    let from_altruistic = shortage.min(altruistic);
    let from_profit = (shortage - from_altruistic).min(profit);

    let mut transfers: BTreeMap<String, f64> =
        ordered.iter().map(|r| (r.prosumer_id.clone(), 0.0)).collect();
    let mut supplied = 0.0;
    for (kind, total, used) in [
        (PolicyKind::Altruistic, altruistic, from_altruistic),
        (PolicyKind::Profit, profit, from_profit),
    ] {
        if used <= RESIDUAL_GUARD_KW {
            continue;
        }
        for r in ordered.iter().filter(|r| r.policy.kind == kind) {
            let share = r.committed_kw * (used / total);
            transfers.insert(r.prosumer_id.clone(), share);
            supplied += share;
        }
    }
    if supplied > 0.0 {
        // sinks take pro-rata shares; the last one absorbs rounding so the ledger closes exactly
        let sinks: Vec<&&ProsumerResponse> =
            ordered.iter().filter(|r| shortage_of(r) > 0.0).collect();
        let mut received = 0.0;
        for (i, r) in sinks.iter().enumerate() {
            let share = if i + 1 == sinks.len() {
                supplied - received
            } else {
                shortage_of(r) * (supplied / shortage)
            };
            received += share;
            transfers.insert(r.prosumer_id.clone(), -share);
        }
    }

    let clean = |x: f64| if x <= RESIDUAL_GUARD_KW { 0.0 } else { x };
    let sell = clean(altruistic + profit - supplied);
    let residual = clean(shortage - supplied);
    let v2g = if preliminary.kind == DecisionKind::RegulateV2G {
        residual.min(preliminary.magnitude_kw)
    } else {
        0.0
    };
    let buy = clean(residual - v2g);
    let (kind, external_kw) = if buy > 0.0 {
        (TradeKind::BuyExternal, buy)
    } else if sell > 0.0 {
        (TradeKind::SellExternal, sell)
    } else if v2g > 0.0 {
        (TradeKind::V2GRegulation, 0.0)
    } else {
        (TradeKind::InternalBalance, 0.0)
    };
    Ok(FinalTrade {
        kind,
        external_kw,
        internal_transfers: transfers,
        v2g_dispatch_kw: v2g,
    })
}
