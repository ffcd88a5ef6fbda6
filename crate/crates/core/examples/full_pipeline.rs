//! Data generation, federated and centralized training, evaluation, trading and the traffic
//! report, all with a small model so it finishes in seconds.
//!
//! `cargo run --release --example full_pipeline -- [out_dir]`

use std::path::PathBuf;

use pcg_feel::experiment::{
    cmd_evaluate, cmd_generate_data, cmd_report_comm, cmd_simulate, cmd_train, ExperimentConfig,
    SimulationSource, TrainMode,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut cfg = ExperimentConfig::ci();
    cfg.out_dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("pcg-feel-pipeline"));
    cfg.data.synthetic.days = 7;
    cfg.data.synthetic.ev_days = 7;
    for s in [&mut cfg.signals.pv, &mut cfg.signals.consumption, &mut cfg.signals.ev] {
        s.hidden_sizes = vec![8];
    }
    cfg.federated.rounds = 4;
    cfg.federated.local_epochs = 2;
    cfg.federated.personalization_epochs = 2;
    cfg.centralized.epochs = 4;

    cmd_generate_data(&cfg, true)?;
    cmd_train(&cfg, TrainMode::Federated)?;
    cmd_train(&cfg, TrainMode::Centralized)?;
    for m in cmd_evaluate(&cfg)? {
        println!(
            "{:<12} {:<13} RMSE {:.4} ± {:.4} kW over {} prosumers",
            m.signal.file_stem(),
            m.variant.as_str(),
            m.rmse_mean,
            m.rmse_std,
            m.n_prosumers
        );
    }
    for source in [SimulationSource::Oracle, SimulationSource::Global, SimulationSource::Personalized] {
        let s = cmd_simulate(&cfg, 96, source)?;
        println!(
            "{:<13} mean |imbalance| {:.4} kW, net external {:+.2} kW",
            source.as_str(),
            s.mean_abs_imbalance_kw,
            s.total_external_kw
        );
    }
    for row in cmd_report_comm(&cfg)? {
        println!(
            "{:<12} federated {} B vs centralized {} B",
            row.signal.file_stem(),
            row.report.federated_total,
            row.report.centralized_baseline_bytes
        );
    }
    println!("artifacts in {}", cfg.run_dir().display());
    Ok(())
}
