use std::collections::BTreeMap;
use std::io::Write;

use chrono::{DateTime, Duration, Utc};
use rayon::prelude::*;

use super::{
    aggregator_preliminary, finalize_trade, prosumer_local_decision, AggregatorDecision,
    DecisionError, DecisionKind, FinalTrade, ForecastBundle, ProsumerResponse, Result, TradeKind,
    TradingPolicy,
};
use crate::data::{NormalizationParams, ProsumerDataset, SignalKind, TimeSeries};
use crate::nn::{predict_many, ParamVector};

/// Length of one trading interval.
pub const INTERVAL_MINUTES: u32 = 15;

/// Default deadband as a share of mean community consumption.
pub const DEFAULT_DEADBAND_FRACTION: f64 = 0.02;

pub fn default_deadband(mean_community_consumption_kw: f64) -> f64 {
    DEFAULT_DEADBAND_FRACTION * mean_community_consumption_kw.max(0.0)
}

/// A trained forecaster together with the scaling of the client data it was trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalModel {
    pub params: ParamVector,
    pub norm: NormalizationParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsumerModels {
    pub pv: Option<SignalModel>,
    pub consumption: SignalModel,
    pub ev: Option<SignalModel>,
}

impl ProsumerModels {
    fn get(&self, kind: SignalKind) -> Option<&SignalModel> {
        match kind {
            SignalKind::Pv => self.pv.as_ref(),
            SignalKind::Consumption => Some(&self.consumption),
            SignalKind::Ev => self.ev.as_ref(),
        }
    }
}

/// One community member: metered data and trading policy.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsumerProfile {
    pub prosumer_id: String,
    pub data: ProsumerDataset,
    pub policy: TradingPolicy,
}

/// Where interval forecasts come from.
#[derive(Debug, Clone, Copy)]
pub enum ForecastMode<'a> {
    /// Per-prosumer models keyed by prosumer id.
    Models(&'a BTreeMap<String, ProsumerModels>),
    /// The realized values themselves.
    Oracle,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub timestamp: DateTime<Utc>,
    pub forecast: ForecastBundle,
    pub preliminary: AggregatorDecision,
    pub responses: Vec<ProsumerResponse>,
    pub trade: FinalTrade,
    pub actual_net_kw: f64,
    /// Sum over prosumers and signals of |forecast - actual|.
    pub forecast_error_kw: f64,
    /// Planned net position minus realized net surplus.
    pub realized_imbalance_kw: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TradingLog {
    pub prosumer_ids: Vec<String>,
    pub steps: Vec<StepLog>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TradingSummary {
    pub steps: usize,
    pub decision_counts: BTreeMap<DecisionKind, usize>,
    pub trade_counts: BTreeMap<TradeKind, usize>,
    pub total_external_kw: f64,
    pub total_v2g_kw: f64,
    pub total_forecast_error_kw: f64,
    pub total_abs_imbalance_kw: f64,
    pub mean_abs_imbalance_kw: f64,
}

/// Per-interval forecasts and realized values of one signal.
struct Track {
    forecast: Vec<f64>,
    actual: Vec<f64>,
}

impl Track {
    fn zeros(steps: usize) -> Self {
        Self {
            forecast: vec![0.0; steps],
            actual: vec![0.0; steps],
        }
    }
}

fn interval_start(start: DateTime<Utc>, step: usize) -> DateTime<Utc> {
    start + Duration::minutes(INTERVAL_MINUTES as i64 * step as i64)
}

/// Index of `t` in `series`, with `history` samples before it and `ahead` samples from it.
fn locate(
    series: &TimeSeries,
    t: DateTime<Utc>,
    history: usize,
    ahead: usize,
    id: &str,
    step: usize,
) -> Result<usize> {
    let offset = (t - series.start()).num_seconds();
    let res = 60 * series.resolution_minutes() as i64;
    if offset % res != 0 {
        return Err(DecisionError::Misaligned(format!(
            "{id} {} series is off the {}-minute grid at {t}",
            series.kind(),
            series.resolution_minutes()
        )));
    }
    let idx = offset / res;
    if idx < history as i64 || idx + ahead as i64 > series.len() as i64 {
        return Err(DecisionError::HorizonExceedsData {
            id: id.to_string(),
            signal: series.kind().to_string(),
            step,
        });
    }
    Ok(idx as usize)
}

fn interval_samples(series: &TimeSeries) -> usize {
    (INTERVAL_MINUTES / series.resolution_minutes()).max(1) as usize
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn signal_track(
    profile: &ProsumerProfile,
    kind: SignalKind,
    model: Option<&SignalModel>,
    oracle: bool,
    start: DateTime<Utc>,
    steps: usize,
) -> Result<Track> {
    let id = &profile.prosumer_id;
    let Some(series) = profile.data.signal(kind) else {
        return Ok(Track::zeros(steps));
    };
    if INTERVAL_MINUTES % series.resolution_minutes() != 0 {
        return Err(DecisionError::Misaligned(format!(
            "{id} {kind} resolution does not divide the trading interval"
        )));
    }
    let per_interval = interval_samples(series);
    let model = match (oracle, model) {
        (true, _) => None,
        (false, Some(m)) => Some(m),
        (false, None) => {
            return Err(DecisionError::MissingModel {
                id: id.clone(),
                signal: kind.to_string(),
            })
        }
    };
    let lookback = model.map_or(0, |m| m.params.topology().lookback);
    let indices = (0..steps)
        .map(|s| locate(series, interval_start(start, s), lookback, per_interval, id, s))
        .collect::<Result<Vec<_>>>()?;
    let values = series.values();
    let actual: Vec<f64> = indices
        .iter()
        .map(|&i| mean(&values[i..i + per_interval]))
        .collect();
    let Some(model) = model else {
        return Ok(Track {
            forecast: actual.clone(),
            actual,
        });
    };

    // roll the model forward until the whole interval is covered, feeding predictions back in
    let norm = model.norm;
    let mut buffers: Vec<Vec<f64>> = indices
        .iter()
        .map(|&i| values[i - lookback..i].iter().map(|&v| norm.normalize(v)).collect())
        .collect();
    let mut produced = 0;
    while produced < per_interval {
        let windows: Vec<&[f64]> = buffers.iter().map(|b| &b[b.len() - lookback..]).collect();
        let preds = predict_many(&model.params, &windows)?;
        for (b, p) in buffers.iter_mut().zip(preds) {
            b.extend(p);
        }
        produced = buffers[0].len() - lookback;
    }
    let forecast = buffers
        .iter()
        .map(|b| {
            let kw: Vec<f64> = b[lookback..lookback + per_interval]
                .iter()
                .map(|&v| norm.denormalize(v).max(0.0))
                .collect();
            mean(&kw)
        })
        .collect();
    Ok(Track { forecast, actual })
}

/// Runs the decision loop for `steps` consecutive 15-minute intervals from `start`.
pub fn simulate_trading_horizon(
    profiles: &[ProsumerProfile],
    mode: ForecastMode<'_>,
    start: DateTime<Utc>,
    steps: usize,
    deadband_kw: f64,
) -> Result<TradingLog> {
    let mut ordered: Vec<&ProsumerProfile> = profiles.iter().collect();
    ordered.sort_by(|a, b| a.prosumer_id.cmp(&b.prosumer_id));
    for pair in ordered.windows(2) {
        if pair[0].prosumer_id == pair[1].prosumer_id {
            return Err(DecisionError::DuplicateResponse(pair[0].prosumer_id.clone()));
        }
    }
    for p in &ordered {
        p.policy.validate()?;
    }
    let prosumer_ids: Vec<String> = ordered.iter().map(|p| p.prosumer_id.clone()).collect();
    if steps == 0 {
        return Ok(TradingLog {
            prosumer_ids,
            steps: Vec::new(),
        });
    }

    let tracks: Vec<[Track; 3]> = ordered
        .par_iter()
        .map(|p| {
            let models = match mode {
                ForecastMode::Models(all) => {
                    Some(all.get(&p.prosumer_id).ok_or_else(|| DecisionError::MissingModel {
                        id: p.prosumer_id.clone(),
                        signal: SignalKind::Consumption.to_string(),
                    })?)
                }
                ForecastMode::Oracle => None,
            };
            let oracle = models.is_none();
            let track = |kind| signal_track(p, kind, models.and_then(|m| m.get(kind)), oracle, start, steps);
            Ok([
                track(SignalKind::Pv)?,
                track(SignalKind::Consumption)?,
                track(SignalKind::Ev)?,
            ])
        })
        .collect::<Result<_>>()?;

    let mut log = Vec::with_capacity(steps);
    for step in 0..steps {
        let mut production = 0.0;
        let mut consumption = 0.0;
        let mut v2g = 0.0;
        let mut actual_production = 0.0;
        let mut actual_consumption = 0.0;
        let mut error = 0.0;
        for [pv, load, ev] in &tracks {
            production += pv.forecast[step];
            consumption += load.forecast[step] + ev.forecast[step];
            v2g += ev.forecast[step];
            actual_production += pv.actual[step];
            actual_consumption += load.actual[step] + ev.actual[step];
            error += (pv.forecast[step] - pv.actual[step]).abs()
                + (load.forecast[step] - load.actual[step]).abs()
                + (ev.forecast[step] - ev.actual[step]).abs();
        }
        let timestamp = interval_start(start, step);
        let forecast = ForecastBundle {
            interval_start: timestamp,
            interval_minutes: INTERVAL_MINUTES,
            predicted_production_kw: production,
            predicted_consumption_kw: consumption,
            predicted_v2g_available_kw: v2g,
        };
        let preliminary = aggregator_preliminary(&forecast, deadband_kw);
        let responses: Vec<ProsumerResponse> = ordered
            .iter()
            .zip(&tracks)
            .map(|(p, [pv, load, ev])| {
                prosumer_local_decision(
                    &p.prosumer_id,
                    pv.forecast[step],
                    ev.forecast[step],
                    load.forecast[step],
                    p.policy,
                    &preliminary,
                )
            })
            .collect();
        let trade = finalize_trade(&preliminary, &responses)?;
        let actual_net_kw = actual_production - actual_consumption;
        log.push(StepLog {
            step,
            timestamp,
            forecast,
            preliminary,
            responses,
            trade,
            actual_net_kw,
            forecast_error_kw: error,
            realized_imbalance_kw: preliminary.signed_kw(forecast.net_kw()) - actual_net_kw,
        });
    }
    Ok(TradingLog {
        prosumer_ids,
        steps: log,
    })
}

impl TradingLog {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn csv_header(&self) -> String {
        let mut header = String::from(
            "step,timestamp,decision_kind,magnitude_kw,external_kw,v2g_kw,forecast_error_kw,realized_imbalance_kw",
        );
        for id in &self.prosumer_ids {
            header.push_str(",transfer_");
            header.push_str(id);
        }
        header
    }

    /// `external_kw` is signed: sales positive, purchases negative.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", self.csv_header())?;
        for s in &self.steps {
            write!(
                out,
                "{},{},{},{},{},{},{},{}",
                s.step,
                s.timestamp.format("%Y-%m-%dT%H:%M:%SZ"),
                s.preliminary.kind.as_str(),
                s.preliminary.magnitude_kw,
                s.trade.signed_external_kw(),
                s.trade.v2g_dispatch_kw,
                s.forecast_error_kw,
                s.realized_imbalance_kw
            )?;
            for id in &self.prosumer_ids {
                write!(out, ",{}", s.trade.internal_transfers.get(id).copied().unwrap_or(0.0))?;
            }
            writeln!(out)?;
        }
        Ok(())
    }

    pub fn summary(&self) -> TradingSummary {
        let mut decision_counts: BTreeMap<DecisionKind, usize> =
            DecisionKind::ALL.iter().map(|&k| (k, 0)).collect();
        let mut trade_counts: BTreeMap<TradeKind, usize> =
            TradeKind::ALL.iter().map(|&k| (k, 0)).collect();
        let mut summary = TradingSummary {
            steps: self.steps.len(),
            decision_counts: BTreeMap::new(),
            trade_counts: BTreeMap::new(),
            total_external_kw: 0.0,
            total_v2g_kw: 0.0,
            total_forecast_error_kw: 0.0,
            total_abs_imbalance_kw: 0.0,
            mean_abs_imbalance_kw: 0.0,
        };
        for s in &self.steps {
            *decision_counts.entry(s.preliminary.kind).or_default() += 1;
            *trade_counts.entry(s.trade.kind).or_default() += 1;
            summary.total_external_kw += s.trade.signed_external_kw();
            summary.total_v2g_kw += s.trade.v2g_dispatch_kw;
            summary.total_forecast_error_kw += s.forecast_error_kw;
            summary.total_abs_imbalance_kw += s.realized_imbalance_kw.abs();
        }
        if !self.steps.is_empty() {
            summary.mean_abs_imbalance_kw = summary.total_abs_imbalance_kw / self.steps.len() as f64;
        }
        summary.decision_counts = decision_counts;
        summary.trade_counts = trade_counts;
        summary
    }
}

impl TradingSummary {
    /// `metric,value` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "metric,value")?;
        writeln!(out, "steps,{}", self.steps)?;
        for (k, n) in &self.decision_counts {
            writeln!(out, "decision_{},{}", k.as_str(), n)?;
        }
        for (k, n) in &self.trade_counts {
            writeln!(out, "trade_{},{}", k.as_str(), n)?;
        }
        writeln!(out, "total_external_kw,{}", self.total_external_kw)?;
        writeln!(out, "total_v2g_kw,{}", self.total_v2g_kw)?;
        writeln!(out, "total_forecast_error_kw,{}", self.total_forecast_error_kw)?;
        writeln!(out, "total_abs_imbalance_kw,{}", self.total_abs_imbalance_kw)?;
        writeln!(out, "mean_abs_imbalance_kw,{}", self.mean_abs_imbalance_kw)?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic_pcg, SyntheticConfig, SYNTHETIC_START};
    use crate::decision::{PolicyKind, TradingPolicy};
    use crate::nn::{init_params, ModelTopology};

    fn profiles() -> Vec<ProsumerProfile> {
        let cfg = SyntheticConfig {
            n_prosumers: 4,
            n_with_ev: 2,
            days: 4,
            ev_days: 2,
            ..SyntheticConfig::default()
        };
        generate_synthetic_pcg(&cfg)
            .unwrap()
            .into_iter()
            .enumerate()
            .map(|(i, data)| ProsumerProfile {
                prosumer_id: data.prosumer_id.clone(),
                data,
                policy: TradingPolicy {
                    kind: if i % 2 == 0 {
                        PolicyKind::Altruistic
                    } else {
                        PolicyKind::Profit
                    },
                    commit_fraction: 0.8,
                    reserve_kw: 0.1,
                },
            })
            .collect()
    }

    fn day3() -> DateTime<Utc> {
        SYNTHETIC_START + Duration::days(3)
    }

    fn models(p: &[ProsumerProfile]) -> BTreeMap<String, ProsumerModels> {
        let m1 = ModelTopology::model1().with_hidden(vec![4]);
        let m2 = ModelTopology::model2().with_hidden(vec![4]);
        let norm = NormalizationParams {
            min_value: 0.0,
            max_value: 5.0,
        };
        p.iter()
            .map(|p| {
                let sm = |t: &ModelTopology| SignalModel {
                    params: init_params(t, 1).unwrap(),
                    norm,
                };
                (
                    p.prosumer_id.clone(),
                    ProsumerModels {
                        pv: Some(sm(&m1)),
                        consumption: sm(&m1),
                        ev: p.data.ev.as_ref().map(|_| sm(&m2)),
                    },
                )
            })
            .collect()
    }

    #[test]
    fn oracle_forecasts_leave_no_imbalance() {
        let p = profiles();
        let log = simulate_trading_horizon(&p, ForecastMode::Oracle, day3(), 96, 0.1).unwrap();
        assert_eq!(log.len(), 96);
        for s in &log.steps {
            assert_eq!(s.realized_imbalance_kw, 0.0);
            assert_eq!(s.forecast_error_kw, 0.0);
        }
        let kinds: std::collections::BTreeSet<_> =
            log.steps.iter().map(|s| s.preliminary.kind).collect();
        assert!(kinds.contains(&DecisionKind::Sell));
    }

    #[test]
    fn zero_steps_is_empty() {
        let log = simulate_trading_horizon(&profiles(), ForecastMode::Oracle, day3(), 0, 0.1).unwrap();
        assert!(log.is_empty());
        assert_eq!(log.summary().mean_abs_imbalance_kw, 0.0);
    }

    #[test]
    fn model_forecasts_run_and_summarize() {
        let p = profiles();
        let m = models(&p);
        let log = simulate_trading_horizon(&p, ForecastMode::Models(&m), day3(), 8, 0.1).unwrap();
        assert_eq!(log.len(), 8);
        assert!(log.steps.iter().any(|s| s.forecast_error_kw > 0.0));
        let summary = log.summary();
        assert_eq!(summary.decision_counts.values().sum::<usize>(), 8);
        let mut csv = Vec::new();
        log.write_csv(&mut csv).unwrap();
        let text = String::from_utf8(csv).unwrap();
        let rows: Vec<&str> = text.lines().collect();
        assert_eq!(rows.len(), 9);
        assert!(rows[0].ends_with("transfer_p03,transfer_p04"));
        let column = |name: &str| {
            let at = rows[0].split(',').position(|c| c == name).unwrap();
            rows[1..]
                .iter()
                .map(|r| r.split(',').nth(at).unwrap().parse::<f64>().unwrap())
                .collect::<Vec<_>>()
        };
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-9 * (1.0 + a.abs());
        assert!(close(column("external_kw").iter().sum(), summary.total_external_kw));
        assert!(close(column("v2g_kw").iter().sum(), summary.total_v2g_kw));
        assert!(close(
            column("realized_imbalance_kw").iter().map(|v| v.abs()).sum(),
            summary.total_abs_imbalance_kw
        ));
        let again = simulate_trading_horizon(&p, ForecastMode::Models(&m), day3(), 8, 0.1).unwrap();
        assert_eq!(log, again);
    }

    #[test]
    fn horizon_errors() {
        let p = profiles();
        assert!(matches!(
            simulate_trading_horizon(&p, ForecastMode::Oracle, day3(), 97, 0.1),
            Err(DecisionError::HorizonExceedsData { .. })
        ));
        assert!(matches!(
            simulate_trading_horizon(&p, ForecastMode::Oracle, day3() + Duration::minutes(5), 1, 0.1),
            Err(DecisionError::Misaligned(_))
        ));
        let m = models(&p);
        // model windows need history before the first interval
        assert!(matches!(
            simulate_trading_horizon(&p, ForecastMode::Models(&m), SYNTHETIC_START, 1, 0.1),
            Err(DecisionError::HorizonExceedsData { .. })
        ));
        let mut partial = m.clone();
        partial.remove("p02");
        assert!(matches!(
            simulate_trading_horizon(&p, ForecastMode::Models(&partial), day3(), 1, 0.1),
            Err(DecisionError::MissingModel { .. })
        ));
    }

    #[test]
    fn deadband_default() {
        assert_eq!(default_deadband(50.0), 1.0);
    }
}
