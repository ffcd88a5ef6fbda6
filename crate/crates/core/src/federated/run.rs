use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{
    fedavg, select_clients, ClientSeeding, ClientUpdate, CommLedger, FLConfig, FederatedError,
    Result, RoundRecord,
};
use crate::data::WindowedDataset;
use crate::nn::{evaluate_rmse, init_params, train_epochs, ModelTopology, ParamVector, TrainConfig};
use crate::seed;

#[derive(Debug, Clone)]
pub struct FederatedRun {
    pub global: ParamVector,
    pub history: Vec<RoundRecord>,
    pub ledger: CommLedger,
}

/// Seed for a client's local training in a given round.
pub fn client_seed(cfg: &FLConfig, prosumer_id: &str, round: usize) -> u64 {
    match cfg.client_seeding {
        ClientSeeding::PerClient => {
            seed::derive(cfg.selection_seed, &[seed::hash_str(prosumer_id), round as u64])
        }
        ClientSeeding::Shared => seed::derive(cfg.selection_seed, &[round as u64]),
    }
}

/// Collection span covered by a client's training windows, in minutes.
pub fn collection_minutes(ds: &WindowedDataset) -> u64 {
    (ds.len() + ds.lookback + ds.horizon - 1) as u64 * ds.resolution_minutes as u64
}

pub fn run_federated(
    clients: &BTreeMap<String, WindowedDataset>,
    topology: &ModelTopology,
    cfg: &FLConfig,
) -> Result<FederatedRun> {
    run_federated_with_eval(clients, None, topology, cfg)
}

/// Runs the full schedule. When `eval` is given and `cfg.evaluate_each_round` is set, each
/// round records the mean kW RMSE of the new global model over the held-out sets.
pub fn run_federated_with_eval(
    clients: &BTreeMap<String, WindowedDataset>,
    eval: Option<&BTreeMap<String, WindowedDataset>>,
    topology: &ModelTopology,
    cfg: &FLConfig,
) -> Result<FederatedRun> {
    cfg.validate()?;
    if let Some((id, _)) = clients.iter().find(|(_, d)| d.is_empty()) {
        return Err(FederatedError::EmptyClient(id.clone()));
    }
    let ids: Vec<String> = clients.keys().cloned().collect();
    if cfg.clients_per_round > ids.len() {
        return Err(FederatedError::NotEnoughClients {
            k: cfg.clients_per_round,
            available: ids.len(),
        });
    }
    let mut global = init_params(topology, cfg.train_cfg.seed)?;
    let mut ledger = CommLedger::new(global.len());
    let mut history = Vec::with_capacity(cfg.rounds);
    let mut best_loss = f64::INFINITY;
    let mut stale = 0;

    for round in 1..=cfg.rounds {
        let selected = select_clients(&ids, cfg.clients_per_round, round, cfg.selection_seed)?;
        // selected is in id order, and so is the collected vector
        let updates: Vec<ClientUpdate> = selected
            .par_iter()
            .map(|id| {
                let data = &clients[id];
                let local = TrainConfig {
                    epochs: cfg.local_epochs,
                    seed: client_seed(cfg, id, round),
                    ..cfg.train_cfg
                };
                let (params, local_loss) = train_epochs(&global, data, &local)?;
                Ok(ClientUpdate {
                    prosumer_id: id.clone(),
                    params,
                    n_samples: data.len(),
                    local_loss,
                })
            })
            .collect::<Result<_>>()?;
        global = fedavg(&updates, cfg.weighting)?;
        let bytes = ledger.record_round(updates.len());
        let mean_local_loss =
            updates.iter().map(|u| u.local_loss).sum::<f64>() / updates.len() as f64;
        let global_eval_rmse = match eval {
            Some(sets) if cfg.evaluate_each_round && !sets.is_empty() => {
                let mut total = 0.0;
                for ds in sets.values() {
                    total += evaluate_rmse(&global, ds, &ds.norm)?;
                }
                Some(total / sets.len() as f64)
            }
            _ => None,
        };
        history.push(RoundRecord {
            round_index: round,
            selected,
            mean_local_loss,
            global_eval_rmse,
            bytes_up: bytes.up,
            bytes_down: bytes.down,
        });
        if let Some(stop) = cfg.early_stop {
            if mean_local_loss < best_loss - stop.min_delta {
                best_loss = mean_local_loss;
                stale = 0;
            } else {
                stale += 1;
                if stale >= stop.patience {
                    break;
                }
            }
        }
    }

    ledger.record_final_broadcast(ids.len());
    ledger.set_baseline(clients.values().map(collection_minutes).collect());
    Ok(FederatedRun {
        global,
        history,
        ledger,
    })
}

/// Fine-tunes the broadcast model on one prosumer's data from a fresh optimizer state.
pub fn personalize(
    global: &ParamVector,
    client_data: &WindowedDataset,
    epochs: usize,
    cfg: &TrainConfig,
) -> Result<ParamVector> {
    let local = TrainConfig { epochs, ..*cfg };
    let (params, _) = train_epochs(global, client_data, &local)?;
    Ok(params)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_windows, NormalizationParams, SignalKind, TimeSeries};
    use crate::federated::Weighting;
    use crate::nn::evaluate_mse;

    fn topo() -> ModelTopology {
        ModelTopology {
            input_size: 1,
            hidden_sizes: vec![3],
            output_size: 1,
            lookback: 4,
        }
    }

    fn wave(phase: f64, amp: f64, n: usize) -> WindowedDataset {
        let values: Vec<f64> = (0..n)
            .map(|i| 1.0 + amp * (i as f64 * 0.4 + phase).sin())
            .collect();
        let s = TimeSeries::new(SignalKind::Consumption, 15, crate::data::SYNTHETIC_START, values)
            .unwrap();
        let norm = NormalizationParams {
            min_value: 0.0,
            max_value: 2.0,
        };
        make_windows(&s, 4, 1, norm).unwrap()
    }

    fn clients(n: usize) -> BTreeMap<String, WindowedDataset> {
        (0..n)
            .map(|i| (format!("c{i}"), wave(i as f64, 0.3 + 0.1 * i as f64, 30)))
            .collect()
    }

    fn cfg(rounds: usize, k: usize) -> FLConfig {
        FLConfig {
            rounds,
            clients_per_round: k,
            local_epochs: 2,
            train_cfg: TrainConfig {
                batch_size: 8,
                learning_rate: 0.01,
                seed: 5,
                ..TrainConfig::default()
            },
            selection_seed: 9,
            ..FLConfig::standard()
        }
    }

    #[test]
    fn zero_rounds_returns_initial_model() {
        let data = clients(3);
        let run = run_federated(&data, &topo(), &cfg(0, 2)).unwrap();
        assert_eq!(run.global, init_params(&topo(), 5).unwrap());
        assert!(run.history.is_empty());
        assert_eq!(run.ledger.total_up(), 0);
        assert_eq!(run.ledger.total_down(), 3 * run.ledger.param_bytes);
    }

    #[test]
    fn identical_clients_match_single_node_training() {
        let ds = wave(0.0, 0.5, 40);
        let data: BTreeMap<_, _> = (0..4).map(|i| (format!("c{i}"), ds.clone())).collect();
        let fl = FLConfig {
            client_seeding: ClientSeeding::Shared,
            ..cfg(3, 4)
        };
        let run = run_federated(&data, &topo(), &fl).unwrap();
        let mut single = init_params(&topo(), 5).unwrap();
        for round in 1..=3 {
            let local = TrainConfig {
                epochs: fl.local_epochs,
                seed: client_seed(&fl, "any", round),
                ..fl.train_cfg
            };
            single = train_epochs(&single, &ds, &local).unwrap().0;
        }
        for (a, b) in run.global.values().iter().zip(single.values()) {
            assert!((a - b).abs() <= 1e-9);
        }
    }

    #[test]
    fn unselected_client_data_is_ignored() {
        let mut data = clients(5);
        let fl = cfg(2, 2);
        let run = run_federated(&data, &topo(), &fl).unwrap();
        let used: std::collections::BTreeSet<_> =
            run.history.iter().flat_map(|r| r.selected.clone()).collect();
        let idle = data.keys().find(|id| !used.contains(*id)).unwrap().clone();
        data.insert(idle, wave(2.0, 0.9, 30));
        let again = run_federated(&data, &topo(), &fl).unwrap();
        assert_eq!(run.global.values(), again.global.values());
    }

    #[test]
    fn single_client_is_sequential_training() {
        let data = clients(1);
        let fl = cfg(3, 1);
        let run = run_federated(&data, &topo(), &fl).unwrap();
        let mut p = init_params(&topo(), 5).unwrap();
        for round in 1..=3 {
            let local = TrainConfig {
                epochs: 2,
                seed: client_seed(&fl, "c0", round),
                ..fl.train_cfg
            };
            p = train_epochs(&p, &data["c0"], &local).unwrap().0;
        }
        assert_eq!(run.global.values(), p.values());
    }

    #[test]
    fn history_and_ledger_follow_schedule() {
        let data = clients(6);
        let fl = FLConfig {
            local_epochs: 1,
            ..cfg(4, 3)
        };
        let run = run_federated(&data, &topo(), &fl).unwrap();
        assert_eq!(run.history.len(), 4);
        for (i, r) in run.history.iter().enumerate() {
            assert_eq!(r.round_index, i + 1);
            assert_eq!(r.selected.len(), 3);
            assert_eq!(r.bytes_up, 3 * run.ledger.param_bytes);
        }
        let per_round: u64 = run.history.iter().map(|r| r.bytes_up + r.bytes_down).sum();
        assert_eq!(
            run.ledger.federated_total(),
            per_round + 6 * run.ledger.param_bytes
        );
        assert_eq!(run.ledger.collection_minutes, vec![30 * 15; 6]);
        let again = run_federated(&data, &topo(), &fl).unwrap();
        assert_eq!(run.global, again.global);
    }

    #[test]
    fn rejects_bad_inputs() {
        let data = clients(2);
        assert!(matches!(
            run_federated(&data, &topo(), &cfg(1, 3)),
            Err(FederatedError::NotEnoughClients { .. })
        ));
        let mut empty = clients(2);
        empty.get_mut("c1").unwrap().inputs.clear();
        empty.get_mut("c1").unwrap().targets.clear();
        assert!(matches!(
            run_federated(&empty, &topo(), &cfg(1, 1)),
            Err(FederatedError::EmptyClient(_))
        ));
    }

    #[test]
    fn early_stop_cuts_rounds() {
        let data = clients(2);
        let fl = FLConfig {
            early_stop: Some(crate::federated::EarlyStop {
                patience: 1,
                min_delta: 1e9,
            }),
            ..cfg(10, 2)
        };
        let run = run_federated(&data, &topo(), &fl).unwrap();
        assert_eq!(run.history.len(), 2);
    }

    #[test]
    fn per_round_evaluation_is_optional() {
        let data = clients(3);
        let fl = FLConfig {
            evaluate_each_round: true,
            weighting: Weighting::BySampleCount,
            ..cfg(2, 2)
        };
        let run = run_federated_with_eval(&data, Some(&data), &topo(), &fl).unwrap();
        assert!(run.history.iter().all(|r| r.global_eval_rmse.is_some()));
        let plain = run_federated(&data, &topo(), &fl).unwrap();
        assert!(plain.history.iter().all(|r| r.global_eval_rmse.is_none()));
        assert_eq!(run.global, plain.global);
    }

    #[test]
    fn personalization_is_deterministic_and_local() {
        let data = clients(3);
        let run = run_federated(&data, &topo(), &cfg(3, 3)).unwrap();
        let tc = cfg(0, 1).train_cfg;
        assert_eq!(personalize(&run.global, &data["c1"], 0, &tc).unwrap(), run.global);
        let a = personalize(&run.global, &data["c1"], 20, &tc).unwrap();
        assert_eq!(a, personalize(&run.global, &data["c1"], 20, &tc).unwrap());
        let before = evaluate_mse(&run.global, &data["c1"]).unwrap();
        let after = evaluate_mse(&a, &data["c1"]).unwrap();
        assert!(after < before, "{after} vs {before}");
    }
}
