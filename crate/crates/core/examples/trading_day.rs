//! One day of aggregator decisions driven by perfect forecasts, then a single settlement by hand.

use pcg_feel::data::{generate_synthetic_pcg, SyntheticConfig, SYNTHETIC_START};
use pcg_feel::decision::{
    aggregator_preliminary, finalize_trade, prosumer_local_decision, simulate_trading_horizon,
    ForecastBundle, ForecastMode, PolicyKind, ProsumerProfile, TradingPolicy,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let community = generate_synthetic_pcg(&SyntheticConfig {
        days: 3,
        ev_days: 2,
        ..SyntheticConfig::default()
    })?;
    let profiles: Vec<ProsumerProfile> = community
        .into_iter()
        .enumerate()
        .map(|(i, d)| ProsumerProfile {
            prosumer_id: d.prosumer_id.clone(),
            data: d,
            policy: TradingPolicy {
                kind: if i % 3 == 0 { PolicyKind::Profit } else { PolicyKind::Altruistic },
                ..TradingPolicy::default()
            },
        })
        .collect();
    let start = SYNTHETIC_START + chrono::Duration::days(2);
    let log = simulate_trading_horizon(&profiles, ForecastMode::Oracle, start, 96, 0.3)?;
    for s in log.steps.iter().step_by(8) {
        println!(
            "{}  net {:>+7.2} kW  {:<12} {:<16} external {:>+7.2} kW",
            s.timestamp.format("%H:%M"),
            s.forecast.net_kw(),
            s.preliminary.kind.as_str(),
            s.trade.kind.as_str(),
            s.trade.signed_external_kw()
        );
    }
    let summary = log.summary();
    println!("total |imbalance| {} kW over {} steps", summary.total_abs_imbalance_kw, summary.steps);

    // two producers and one consumer in a short interval
    let bundle = ForecastBundle {
        interval_start: start,
        interval_minutes: 15,
        predicted_production_kw: 6.0,
        predicted_consumption_kw: 4.0,
        predicted_v2g_available_kw: 0.0,
    };
    let request = aggregator_preliminary(&bundle, 0.5);
    let altruist = TradingPolicy::default();
    let trader = TradingPolicy {
        kind: PolicyKind::Profit,
        commit_fraction: 0.5,
        reserve_kw: 0.0,
    };
    let responses = [
        prosumer_local_decision("a", 4.0, 0.0, 1.0, altruist, &request),
        prosumer_local_decision("b", 2.0, 0.0, 0.0, trader, &request),
        prosumer_local_decision("c", 0.0, 0.0, 3.0, altruist, &request),
    ];
    let trade = finalize_trade(&request, &responses)?;
    println!("{request:?}\n{trade:?}");
    Ok(())
}
