//! Global federated model versus per-prosumer fine-tuned copies on held-out PV data.

use std::collections::BTreeMap;

use pcg_feel::data::{generate_synthetic_pcg, prepare_windows, SyntheticConfig};
use pcg_feel::federated::{personalize, run_federated, FLConfig};
use pcg_feel::nn::{evaluate_rmse, ModelTopology, TrainConfig};

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
        let pv = d.pv.as_ref().expect("synthetic prosumers all have PV");
        let (tr, te) = prepare_windows(pv, topology.lookback, topology.output_size, 0.8)?;
        train.insert(d.prosumer_id.clone(), tr);
        test.insert(d.prosumer_id.clone(), te);
    }

    let mut cfg = FLConfig::standard();
    cfg.rounds = 8;
    cfg.local_epochs = 2;
    cfg.train_cfg.learning_rate = 0.005;
    let run = run_federated(&train, &topology, &cfg)?;

    // a small step size keeps fine-tuning close to the converged global weights
    let tune = TrainConfig {
        learning_rate: 0.0005,
        ..cfg.train_cfg
    };
    let mut better = 0;
    println!("id     global   personalized  (RMSE kW)");
    for (id, data) in &train {
        let local = personalize(&run.global, data, 4, &tune)?;
        let t = &test[id];
        let g = evaluate_rmse(&run.global, t, &t.norm)?;
        let p = evaluate_rmse(&local, t, &t.norm)?;
        if p < g {
            better += 1;
        }
        println!("{id}  {g:>7.4}  {p:>12.4}");
    }
    println!("personalized better for {better}/{} prosumers", train.len());
    Ok(())
}
