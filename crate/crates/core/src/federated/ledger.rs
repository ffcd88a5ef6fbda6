//! Communication accounting for federated rounds and the centralized upload baseline.

use std::io::Write;

use crate::nn::HEADER_BYTES;

/// Centralized baseline sample: 8-byte timestamp plus one f32 reading.
pub const BYTES_PER_SAMPLE: u64 = 12;

/// Bytes for one serialized model: 4 bytes per parameter plus the fixed header.
pub fn param_bytes(param_count: usize) -> u64 {
    4 * param_count as u64 + HEADER_BYTES as u64
}

/// Bytes to upload every prosumer's readings at one-minute resolution.
pub fn centralized_upload_bytes(minutes_per_prosumer: &[u64]) -> u64 {
    minutes_per_prosumer.iter().map(|m| m * BYTES_PER_SAMPLE).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundBytes {
    pub down: u64,
    pub up: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommLedger {
    pub param_bytes: u64,
    pub rounds: Vec<RoundBytes>,
    pub final_broadcast_bytes: u64,
    /// Collection span per prosumer, in minutes, used for the baseline.
    pub collection_minutes: Vec<u64>,
    pub centralized_baseline_bytes: u64,
}

impl CommLedger {
    pub fn new(param_count: usize) -> Self {
        Self {
            param_bytes: param_bytes(param_count),
            rounds: Vec::new(),
            final_broadcast_bytes: 0,
            collection_minutes: Vec::new(),
            centralized_baseline_bytes: 0,
        }
    }

    /// One round: the global model goes down to each selected client and comes back up.
    pub fn record_round(&mut self, clients: usize) -> RoundBytes {
        let bytes = clients as u64 * self.param_bytes;
        let entry = RoundBytes {
            down: bytes,
            up: bytes,
        };
        self.rounds.push(entry);
        entry
    }

    pub fn record_final_broadcast(&mut self, prosumers: usize) {
        self.final_broadcast_bytes += prosumers as u64 * self.param_bytes;
    }

    pub fn set_baseline(&mut self, collection_minutes: Vec<u64>) {
        self.centralized_baseline_bytes = centralized_upload_bytes(&collection_minutes);
        self.collection_minutes = collection_minutes;
    }

    pub fn total_down(&self) -> u64 {
        self.rounds.iter().map(|r| r.down).sum::<u64>() + self.final_broadcast_bytes
    }

    pub fn total_up(&self) -> u64 {
        self.rounds.iter().map(|r| r.up).sum()
    }

    pub fn federated_total(&self) -> u64 {
        self.total_down() + self.total_up()
    }

    pub fn n_prosumers(&self) -> usize {
        self.collection_minutes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommRow {
    pub round: usize,
    pub bytes_down: u64,
    pub bytes_up: u64,
    pub cumulative_bytes: u64,
}

/// Shortest per-prosumer collection span at which uploading raw one-minute data costs more than
/// the whole federated exchange.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Crossover {
    pub minutes: u64,
    pub centralized_bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CommReport {
    pub rows: Vec<CommRow>,
    pub final_broadcast_bytes: u64,
    pub total_down: u64,
    pub total_up: u64,
    pub federated_total: u64,
    pub centralized_baseline_bytes: u64,
    pub baseline_minutes: u64,
    pub crossover: Option<Crossover>,
}

pub fn comm_report(ledger: &CommLedger) -> CommReport {
    let mut cumulative = 0;
    let rows = ledger
        .rounds
        .iter()
        .enumerate()
        .map(|(i, r)| {
            cumulative += r.down + r.up;
            CommRow {
                round: i + 1,
                bytes_down: r.down,
                bytes_up: r.up,
                cumulative_bytes: cumulative,
            }
        })
        .collect();
    let federated_total = ledger.federated_total();
    let per_minute = ledger.n_prosumers() as u64 * BYTES_PER_SAMPLE;
    let crossover = (per_minute > 0).then(|| {
        let minutes = federated_total / per_minute + 1;
        Crossover {
            minutes,
            centralized_bytes: minutes * per_minute,
        }
    });
    CommReport {
        rows,
        final_broadcast_bytes: ledger.final_broadcast_bytes,
        total_down: ledger.total_down(),
        total_up: ledger.total_up(),
        federated_total,
        centralized_baseline_bytes: ledger.centralized_baseline_bytes,
        baseline_minutes: ledger.collection_minutes.iter().copied().max().unwrap_or(0),
        crossover,
    }
}

impl CommReport {
    pub const CSV_HEADER: &'static str =
        "entry,round,bytes_down,bytes_up,federated_cumulative_bytes,centralized_bytes,collection_minutes";

    /// One `round` row per round, then `final_broadcast`, `total` and `crossover`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                out,
                "round,{},{},{},{},{},{}",
                r.round,
                r.bytes_down,
                r.bytes_up,
                r.cumulative_bytes,
                self.centralized_baseline_bytes,
                self.baseline_minutes
            )?;
        }
        writeln!(
            out,
            "final_broadcast,,{},0,{},{},{}",
            self.final_broadcast_bytes,
            self.federated_total,
            self.centralized_baseline_bytes,
            self.baseline_minutes
        )?;
        writeln!(
            out,
            "total,,{},{},{},{},{}",
            self.total_down,
            self.total_up,
            self.federated_total,
            self.centralized_baseline_bytes,
            self.baseline_minutes
        )?;
        if let Some(c) = self.crossover {
            writeln!(
                out,
                "crossover,,,,{},{},{}",
                self.federated_total, c.centralized_bytes, c.minutes
            )?;
        }
        Ok(())
    }
}
