//! Federated training of a consumption forecaster across a synthetic community.

use std::collections::BTreeMap;

use pcg_feel::data::{generate_synthetic_pcg, prepare_windows, SyntheticConfig};
use pcg_feel::federated::{comm_report, run_federated_with_eval, FLConfig};
use pcg_feel::nn::{evaluate_rmse, ModelTopology};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let community = generate_synthetic_pcg(&SyntheticConfig {
        days: 6,
        ev_days: 1,
        ..SyntheticConfig::default()
    })?;
    let topology = ModelTopology::model1().with_hidden(vec![16]);
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for d in &community {
        let (tr, te) = prepare_windows(&d.consumption, topology.lookback, topology.output_size, 0.8)?;
        train.insert(d.prosumer_id.clone(), tr);
        test.insert(d.prosumer_id.clone(), te);
    }

    let mut cfg = FLConfig::standard();
    cfg.rounds = 8;
    cfg.local_epochs = 2;
    cfg.train_cfg.learning_rate = 0.005;
    cfg.evaluate_each_round = true;
    let run = run_federated_with_eval(&train, Some(&test), &topology, &cfg)?;

    println!("round  clients                   local loss   test RMSE kW");
    for r in &run.history {
        println!(
            "{:>5}  {:<25} {:>10.5}   {:>8.4}",
            r.round_index,
            r.selected.join(","),
            r.mean_local_loss,
            r.global_eval_rmse.unwrap_or(f64::NAN)
        );
    }
    let first = &test["p01"];
    println!("p01 global RMSE {:.4} kW", evaluate_rmse(&run.global, first, &first.norm)?);
    let report = comm_report(&run.ledger);
    println!(
        "{} bytes moved, {} bytes for raw upload of the same span",
        report.federated_total, report.centralized_baseline_bytes
    );
    Ok(())
}
