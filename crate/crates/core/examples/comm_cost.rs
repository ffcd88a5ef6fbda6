//! Bytes moved by the federated schedule against uploading raw one-minute samples.

use pcg_feel::federated::{comm_report, param_bytes, CommLedger, BYTES_PER_SAMPLE};
use pcg_feel::nn::ModelTopology;

fn main() {
    for (name, topology) in [("Model1", ModelTopology::model1()), ("Model2", ModelTopology::model2())] {
        let mut ledger = CommLedger::new(topology.param_count());
        for _ in 0..25 {
            ledger.record_round(5);
        }
        ledger.record_final_broadcast(18);
        ledger.set_baseline(vec![14 * 24 * 60; 18]);
        let report = comm_report(&ledger);

        println!("{name}: {} parameters, {} bytes per transfer", topology.param_count(), param_bytes(topology.param_count()));
        println!("  down {} B, up {} B, total {} B", report.total_down, report.total_up, report.federated_total);
        println!(
            "  raw upload of two weeks from 18 prosumers at {BYTES_PER_SAMPLE} B/sample: {} B",
            report.centralized_baseline_bytes
        );
        if let Some(c) = report.crossover {
            println!(
                "  raw upload overtakes federated after {} min ({:.1} days) per prosumer",
                c.minutes,
                c.minutes as f64 / 1440.0
            );
        }
    }
}
