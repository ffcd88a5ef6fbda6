use std::collections::BTreeMap;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, Utc};
use rayon::prelude::*;

use super::{DataSource, ExperimentConfig, ExperimentError, Result};
use crate::data::{
    generate_synthetic_pcg, load_dataset_dir, prepare_windows, train_len, write_dataset_dir,
    ProsumerDataset, SignalKind, WindowedDataset,
};
use crate::decision::{
    default_deadband, simulate_trading_horizon, ForecastMode, ProsumerModels, ProsumerProfile,
    SignalModel, TradingSummary, INTERVAL_MINUTES,
};
use crate::federated::{
    centralized_upload_bytes, collection_minutes, comm_report, personalize,
    run_federated_with_eval, CommLedger, CommReport,
};
use crate::nn::{
    init_params, load_params, predict_many, rmse_with, save_params, train_epochs_with, ParamVector,
    Predictor,
};

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrainMode {
    Federated,
    Centralized,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum ModelVariant {
    Central,
    Global,
    Personalized,
}

impl ModelVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Central => "central",
            Self::Global => "global",
            Self::Personalized => "personalized",
        }
    }
}

/// One line of `metrics.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricRow {
    pub signal: SignalKind,
    pub variant: ModelVariant,
    pub rmse_mean: f64,
    /// Population standard deviation across prosumers.
    pub rmse_std: f64,
    pub n_prosumers: usize,
}

/// Which models drive the trading simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SimulationSource {
    Personalized,
    Global,
    Oracle,
}

impl SimulationSource {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Personalized => "personalized",
            Self::Global => "global",
            Self::Oracle => "oracle",
        }
    }
}

/// One line of `comm_summary.csv`.
#[derive(Debug, Clone, PartialEq)]
pub struct CommSummaryRow {
    pub signal: SignalKind,
    pub param_count: usize,
    pub report: CommReport,
}

/// Per-prosumer train and test windows of one signal.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSplit {
    pub train: BTreeMap<String, WindowedDataset>,
    pub test: BTreeMap<String, WindowedDataset>,
}

fn is_non_empty_dir(path: &Path) -> Result<bool> {
    Ok(path.is_dir() && fs::read_dir(path)?.next().is_some())
}

/// Writes the synthetic community as CSV under the data directory.
pub fn cmd_generate_data(cfg: &ExperimentConfig, force: bool) -> Result<PathBuf> {
    if cfg.data.source != DataSource::Synthetic {
        return Err(ExperimentError::Config(
            "generate-data needs data.source = \"synthetic\"".into(),
        ));
    }
    let synthetic = cfg.synthetic_config();
    synthetic.validate()?;
    let dir = cfg.data_dir();
    if is_non_empty_dir(&dir)? {
        if !force {
            return Err(ExperimentError::OutputExists(dir));
        }
        fs::remove_dir_all(&dir)?;
    }
    let datasets = generate_synthetic_pcg(&synthetic)?;
    fs::create_dir_all(&dir)?;
    write_dataset_dir(&dir, &datasets)?;
    Ok(dir)
}

pub fn load_datasets(cfg: &ExperimentConfig) -> Result<Vec<ProsumerDataset>> {
    let dir = cfg.data_dir();
    if !dir.is_dir() {
        return Err(ExperimentError::MissingArtifact(dir));
    }
    let data = load_dataset_dir(&dir)?;
    if data.is_empty() {
        return Err(ExperimentError::MissingArtifact(dir));
    }
    Ok(data)
}

/// Windows one signal for every prosumer that has it, normalized per prosumer.
pub fn prepare_signal(
    cfg: &ExperimentConfig,
    datasets: &[ProsumerDataset],
    kind: SignalKind,
) -> Result<SignalSplit> {
    let sc = cfg.signal(kind);
    let mut train = BTreeMap::new();
    let mut test = BTreeMap::new();
    for d in datasets {
        if let Some(series) = d.signal(kind) {
            let (tr, te) = prepare_windows(series, sc.lookback, sc.horizon, cfg.data.train_fraction)?;
            train.insert(d.prosumer_id.clone(), tr);
            test.insert(d.prosumer_id.clone(), te);
        }
    }
    Ok(SignalSplit { train, test })
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Trains every signal that at least one prosumer records and returns the run directory.
pub fn cmd_train(cfg: &ExperimentConfig, mode: TrainMode) -> Result<PathBuf> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let run_dir = cfg.run_dir();
    fs::create_dir_all(&run_dir)?;
    fs::write(run_dir.join("config.toml"), cfg.to_toml_string())?;
    for kind in SignalKind::ALL {
        let split = prepare_signal(cfg, &datasets, kind)?;
        if split.train.is_empty() {
            continue;
        }
        let dir = cfg.signal_dir(kind);
        fs::create_dir_all(&dir)?;
        match mode {
            TrainMode::Federated => train_federated(cfg, kind, &split, &dir)?,
            TrainMode::Centralized => train_centralized(cfg, kind, &split, &dir)?,
        }
    }
    Ok(run_dir)
}

fn train_federated(
    cfg: &ExperimentConfig,
    kind: SignalKind,
    split: &SignalSplit,
    dir: &Path,
) -> Result<()> {
    let fl = cfg.fl_config(kind);
    let topology = cfg.signal(kind).topology();
    let run = run_federated_with_eval(&split.train, Some(&split.test), &topology, &fl)?;
    save_params(&dir.join("global.params"), &run.global)?;

    let mut history = create(&dir.join("history.csv"))?;
    writeln!(history, "round,selected_ids,mean_loss,rmse,bytes_up,bytes_down")?;
    for r in &run.history {
        let rmse = r.global_eval_rmse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(
            history,
            "{},{},{},{},{},{}",
            r.round_index,
            r.selected.join(";"),
            r.mean_local_loss,
            rmse,
            r.bytes_up,
            r.bytes_down
        )?;
    }
    history.flush()?;
    let mut report = create(&dir.join("comm_report.csv"))?;
    comm_report(&run.ledger).write_csv(&mut report)?;
    report.flush()?;

    let personalized: Vec<(String, ParamVector)> = split
        .train
        .par_iter()
        .map(|(id, data)| {
            let tc = cfg.personalization_config(kind, id);
            Ok((id.clone(), personalize(&run.global, data, tc.epochs, &tc)?))
        })
        .collect::<Result<_>>()?;
    let pdir = dir.join("personalized");
    fs::create_dir_all(&pdir)?;
    for (id, params) in &personalized {
        save_params(&pdir.join(format!("{id}.params")), params)?;
    }
    Ok(())
}

fn train_centralized(
    cfg: &ExperimentConfig,
    kind: SignalKind,
    split: &SignalSplit,
    dir: &Path,
) -> Result<()> {
    let topology = cfg.signal(kind).topology();
    let pooled = WindowedDataset::pooled(split.train.values()).expect("non-empty split");
    let init = init_params(&topology, cfg.fl_config(kind).train_cfg.seed)?;
    let mut losses = Vec::new();
    let (params, _) = train_epochs_with(&init, &pooled, &cfg.centralized_config(kind), |e, l| {
        losses.push((e + 1, l))
    })?;
    save_params(&dir.join("central.params"), &params)?;

    let mut history = create(&dir.join("central_history.csv"))?;
    writeln!(history, "epoch,mean_loss")?;
    for (e, l) in losses {
        writeln!(history, "{e},{l}")?;
    }
    history.flush()?;
    let minutes: Vec<u64> = split.train.values().map(collection_minutes).collect();
    let mut report = create(&dir.join("central_comm_report.csv"))?;
    writeln!(report, "entry,prosumers,collection_minutes,centralized_bytes")?;
    writeln!(
        report,
        "centralized_upload,{},{},{}",
        minutes.len(),
        minutes.iter().sum::<u64>(),
        centralized_upload_bytes(&minutes)
    )?;
    report.flush()?;
    Ok(())
}

/// Mean, population standard deviation and count of per-prosumer test RMSE in kW.
pub fn variant_rmse<P: Predictor>(
    models: &BTreeMap<String, P>,
    test: &BTreeMap<String, WindowedDataset>,
) -> (f64, f64, usize) {
    let scores: Vec<f64> = test
        .iter()
        .filter_map(|(id, ds)| models.get(id).map(|m| rmse_with(m, ds, &ds.norm)))
        .collect();
    let n = scores.len();
    if n == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = scores.iter().sum::<f64>() / n as f64;
    let var = scores.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / n as f64;
    (mean, var.sqrt(), n)
}

fn load_checked(path: &Path, cfg: &ExperimentConfig, kind: SignalKind) -> Result<ParamVector> {
    if !path.is_file() {
        return Err(ExperimentError::MissingArtifact(path.to_path_buf()));
    }
    let params = load_params(path)?;
    if params.topology() != &cfg.signal(kind).topology() {
        return Err(ExperimentError::TopologyMismatch {
            path: path.to_path_buf(),
        });
    }
    Ok(params)
}

fn load_variant(
    cfg: &ExperimentConfig,
    kind: SignalKind,
    variant: ModelVariant,
    ids: impl Iterator<Item = String>,
) -> Result<BTreeMap<String, ParamVector>> {
    let dir = cfg.signal_dir(kind);
    match variant {
        ModelVariant::Personalized => ids
            .map(|id| {
                let p = load_checked(&dir.join("personalized").join(format!("{id}.params")), cfg, kind)?;
                Ok((id, p))
            })
            .collect(),
        ModelVariant::Global | ModelVariant::Central => {
            let file = if variant == ModelVariant::Global {
                "global.params"
            } else {
                "central.params"
            };
            let p = load_checked(&dir.join(file), cfg, kind)?;
            Ok(ids.map(|id| (id, p.clone())).collect())
        }
    }
}

/// First-step predictions in kW for the first 24 hours of a prosumer's test windows.
fn trace(params: &ParamVector, ds: &WindowedDataset, pairs: usize) -> Result<Vec<f64>> {
    let preds = predict_many(params, &ds.inputs[..pairs])?;
    Ok(preds.iter().map(|p| ds.norm.denormalize(p[0])).collect())
}

fn write_trace(
    path: &Path,
    start: DateTime<Utc>,
    resolution_minutes: u32,
    actual: &[f64],
    columns: &[(ModelVariant, Vec<f64>)],
) -> Result<()> {
    let mut out = create(path)?;
    write!(out, "timestamp,actual_kw")?;
    for (v, _) in columns {
        write!(out, ",{}_kw", v.as_str())?;
    }
    writeln!(out)?;
    for (i, a) in actual.iter().enumerate() {
        let t = start + Duration::minutes(resolution_minutes as i64 * i as i64);
        write!(out, "{},{}", t.format(TIMESTAMP_FORMAT), a)?;
        for (_, values) in columns {
            write!(out, ",{}", values[i])?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

/// Writes `metrics.csv` and 24-hour trace CSVs into the run directory.
pub fn cmd_evaluate(cfg: &ExperimentConfig) -> Result<Vec<MetricRow>> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let mut rows = Vec::new();
    for kind in SignalKind::ALL {
        let split = prepare_signal(cfg, &datasets, kind)?;
        if split.test.is_empty() {
            continue;
        }
        let mut variants = vec![ModelVariant::Global, ModelVariant::Personalized];
        if cfg.signal_dir(kind).join("central.params").is_file() {
            variants.insert(0, ModelVariant::Central);
        }
        let mut loaded = Vec::new();
        for v in variants {
            let models = load_variant(cfg, kind, v, split.test.keys().cloned())?;
            let (rmse_mean, rmse_std, n_prosumers) = variant_rmse(&models, &split.test);
            rows.push(MetricRow {
                signal: kind,
                variant: v,
                rmse_mean,
                rmse_std,
                n_prosumers,
            });
            loaded.push((v, models));
        }
        write_traces(cfg, kind, &split, &loaded)?;
    }
    let mut out = create(&cfg.run_dir().join("metrics.csv"))?;
    writeln!(out, "signal,model_variant,rmse_mean,rmse_std,n_prosumers")?;
    for r in &rows {
        writeln!(
            out,
            "{},{},{},{},{}",
            r.signal.file_stem(),
            r.variant.as_str(),
            r.rmse_mean,
            r.rmse_std,
            r.n_prosumers
        )?;
    }
    out.flush()?;
    Ok(rows)
}

fn write_traces(
    cfg: &ExperimentConfig,
    kind: SignalKind,
    split: &SignalSplit,
    loaded: &[(ModelVariant, BTreeMap<String, ParamVector>)],
) -> Result<()> {
    let (first_id, first) = split.test.iter().next().expect("non-empty");
    let per_day = (24 * 60 / first.resolution_minutes) as usize;
    let aligned: Vec<(&String, &WindowedDataset)> = split
        .test
        .iter()
        .filter(|(_, d)| d.first_target == first.first_target && d.len() >= per_day.min(first.len()))
        .collect();
    let pairs = per_day.min(first.len());
    let dir = cfg.run_dir().join("traces");
    let actual = |ds: &WindowedDataset| -> Vec<f64> {
        ds.targets[..pairs].iter().map(|t| ds.norm.denormalize(t[0])).collect()
    };

    let mut sample_cols = Vec::new();
    let mut aggregate_cols = Vec::new();
    for (v, models) in loaded {
        sample_cols.push((*v, trace(&models[first_id], first, pairs)?));
        let mut total = vec![0.0; pairs];
        for (id, ds) in &aligned {
            for (t, p) in total.iter_mut().zip(trace(&models[*id], ds, pairs)?) {
                *t += p;
            }
        }
        aggregate_cols.push((*v, total));
    }
    let mut aggregate_actual = vec![0.0; pairs];
    for (_, ds) in &aligned {
        for (t, a) in aggregate_actual.iter_mut().zip(actual(ds)) {
            *t += a;
        }
    }
    let stem = kind.file_stem();
    write_trace(
        &dir.join(format!("{stem}_{first_id}.csv")),
        first.first_target,
        first.resolution_minutes,
        &actual(first),
        &sample_cols,
    )?;
    write_trace(
        &dir.join(format!("{stem}_aggregate.csv")),
        first.first_target,
        first.resolution_minutes,
        &aggregate_actual,
        &aggregate_cols,
    )
}

fn round_up_to_interval(t: DateTime<Utc>) -> DateTime<Utc> {
    let step = 60 * INTERVAL_MINUTES as i64;
    let secs = t.timestamp();
    let rounded = (secs + step - 1).div_euclid(step) * step;
    DateTime::from_timestamp(rounded, 0).expect("in range")
}

/// Runs the trading loop over the test period and writes the log and summary CSVs under
/// `<run>/trading/`.
pub fn cmd_simulate(
    cfg: &ExperimentConfig,
    steps: usize,
    source: SimulationSource,
) -> Result<TradingSummary> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let mut splits = BTreeMap::new();
    for kind in SignalKind::ALL {
        splits.insert(kind, prepare_signal(cfg, &datasets, kind)?);
    }
    let start = splits
        .values()
        .flat_map(|s| s.test.values().map(|d| d.first_target))
        .max()
        .map(round_up_to_interval)
        .ok_or_else(|| ExperimentError::MissingArtifact(cfg.data_dir()))?;

    let mut models: BTreeMap<String, ProsumerModels> = BTreeMap::new();
    if source != SimulationSource::Oracle {
        let variant = if source == SimulationSource::Global {
            ModelVariant::Global
        } else {
            ModelVariant::Personalized
        };
        let mut per_signal = BTreeMap::new();
        for (kind, split) in &splits {
            let loaded = if split.train.is_empty() {
                BTreeMap::new()
            } else {
                load_variant(cfg, *kind, variant, split.train.keys().cloned())?
            };
            per_signal.insert(*kind, loaded);
        }
        let model_for = |kind: SignalKind, id: &str| -> Option<SignalModel> {
            let params = per_signal[&kind].get(id)?.clone();
            let norm = splits[&kind].train[id].norm;
            Some(SignalModel { params, norm })
        };
        for d in &datasets {
            let id = d.prosumer_id.as_str();
            let consumption = model_for(SignalKind::Consumption, id).ok_or_else(|| {
                ExperimentError::MissingArtifact(cfg.signal_dir(SignalKind::Consumption))
            })?;
            models.insert(
                id.to_string(),
                ProsumerModels {
                    pv: model_for(SignalKind::Pv, id),
                    consumption,
                    ev: model_for(SignalKind::Ev, id),
                },
            );
        }
    }

    let profiles: Vec<ProsumerProfile> = datasets
        .iter()
        .map(|d| ProsumerProfile {
            prosumer_id: d.prosumer_id.clone(),
            policy: cfg.decision.policy_for(&d.prosumer_id),
            data: d.clone(),
        })
        .collect();
    let deadband = cfg
        .decision
        .deadband_kw
        .unwrap_or_else(|| default_deadband(mean_training_consumption(cfg, &datasets)));
    let mode = match source {
        SimulationSource::Oracle => ForecastMode::Oracle,
        _ => ForecastMode::Models(&models),
    };
    let log = simulate_trading_horizon(&profiles, mode, start, steps, deadband)?;
    let summary = log.summary();
    let dir = cfg.run_dir().join("trading");
    let mut out = create(&dir.join(format!("{}_log.csv", source.as_str())))?;
    log.write_csv(&mut out)?;
    out.flush()?;
    let mut out = create(&dir.join(format!("{}_summary.csv", source.as_str())))?;
    writeln!(out, "# deadband_kw={deadband}")?;
    summary.write_csv(&mut out)?;
    out.flush()?;
    Ok(summary)
}

/// Mean community consumption over each prosumer's training share of samples.
fn mean_training_consumption(cfg: &ExperimentConfig, datasets: &[ProsumerDataset]) -> f64 {
    datasets
        .iter()
        .map(|d| {
            let v = d.consumption.values();
            let n = train_len(v.len(), cfg.data.train_fraction).max(1);
            v[..n].iter().sum::<f64>() / n as f64
        })
        .sum()
}

fn read_history(path: &Path) -> Result<Vec<usize>> {
    if !path.is_file() {
        return Err(ExperimentError::MissingArtifact(path.to_path_buf()));
    }
    let mut reader = csv::Reader::from_path(path)?;
    let mut selected = Vec::new();
    for row in reader.records() {
        let row = row?;
        let ids = row.get(1).ok_or_else(|| ExperimentError::MalformedArtifact {
            path: path.to_path_buf(),
            reason: "missing selected_ids column".into(),
        })?;
        selected.push(ids.split(';').filter(|s| !s.is_empty()).count());
    }
    Ok(selected)
}

/// Rebuilds each signal's ledger from the trained run and writes `comm_summary.csv`.
pub fn cmd_report_comm(cfg: &ExperimentConfig) -> Result<Vec<CommSummaryRow>> {
    cfg.validate()?;
    let datasets = load_datasets(cfg)?;
    let mut rows = Vec::new();
    for kind in SignalKind::ALL {
        let split = prepare_signal(cfg, &datasets, kind)?;
        if split.train.is_empty() {
            continue;
        }
        let dir = cfg.signal_dir(kind);
        let global = load_checked(&dir.join("global.params"), cfg, kind)?;
        let mut ledger = CommLedger::new(global.len());
        for k in read_history(&dir.join("history.csv"))? {
            ledger.record_round(k);
        }
        ledger.record_final_broadcast(split.train.len());
        ledger.set_baseline(split.train.values().map(collection_minutes).collect());
        rows.push(CommSummaryRow {
            signal: kind,
            param_count: global.len(),
            report: comm_report(&ledger),
        });
    }
    let mut out = create(&cfg.run_dir().join("comm_summary.csv"))?;
    writeln!(
        out,
        "signal,param_count,rounds,bytes_down,bytes_up,federated_bytes,centralized_bytes,crossover_minutes,crossover_bytes"
    )?;
    for r in &rows {
        let (cm, cb) = r
            .report
            .crossover
            .map(|c| (c.minutes.to_string(), c.centralized_bytes.to_string()))
            .unwrap_or_default();
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.signal.file_stem(),
            r.param_count,
            r.report.rows.len(),
            r.report.total_down,
            r.report.total_up,
            r.report.federated_total,
            r.report.centralized_baseline_bytes,
            cm,
            cb
        )?;
    }
    out.flush()?;
    Ok(rows)
}
