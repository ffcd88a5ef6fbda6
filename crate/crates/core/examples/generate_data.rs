//! Writes a synthetic 18-prosumer community as CSV and prints per-prosumer totals.
//!
//! `cargo run --example generate_data -- [out_dir]`

use std::path::PathBuf;

use pcg_feel::data::{generate_synthetic_pcg, load_dataset_dir, write_dataset_dir, SyntheticConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pcg-feel-data"));
    let cfg = SyntheticConfig {
        days: 14,
        ev_days: 3,
        ..SyntheticConfig::default()
    };
    let community = generate_synthetic_pcg(&cfg)?;
    write_dataset_dir(&dir, &community)?;

    // read it back the way the pipeline does
    let loaded = load_dataset_dir(&dir)?;
    assert_eq!(loaded, community);

    println!("{}", dir.display());
    println!("{:<6} {:>10} {:>14} {:>10}", "id", "pv kWh", "consumed kWh", "ev kWh");
    for d in &loaded {
        let kwh = |s: Option<&pcg_feel::data::TimeSeries>| {
            s.map(|s| s.values().iter().sum::<f64>() * s.resolution_minutes() as f64 / 60.0)
        };
        let fmt = |v: Option<f64>| v.map(|v| format!("{v:.1}")).unwrap_or_else(|| "-".into());
        println!(
            "{:<6} {:>10} {:>14} {:>10}",
            d.prosumer_id,
            fmt(kwh(d.pv.as_ref())),
            fmt(kwh(Some(&d.consumption))),
            fmt(kwh(d.ev.as_ref()))
        );
    }
    Ok(())
}
