//! `timestamp,value` CSV ingestion and export.

use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Utc};

use super::{DataError, ProsumerDataset, Result, SignalKind, TimeSeries};

/// Longest run of missing samples that is filled by linear interpolation.
pub const MAX_INTERPOLATED_GAP: usize = 3;

const TIMESTAMP_FORMAT: &str = "%Y-%m-%dT%H:%M:%SZ";

fn parse_timestamp(raw: &str) -> Option<DateTime<Utc>> {
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.with_timezone(&Utc));
    }
    ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"]
        .iter()
        .find_map(|f| NaiveDateTime::parse_from_str(raw, f).ok())
        .map(|n| n.and_utc())
}

/// Reads a sorted `timestamp,value` file into a gap-free series on a fixed grid.
///
/// Runs of up to [`MAX_INTERPOLATED_GAP`] missing samples are filled linearly; longer gaps,
/// off-grid or unsorted timestamps, malformed rows and negative PV/EV values are errors.
pub fn load_csv(path: &Path, kind: SignalKind, resolution_minutes: u32) -> Result<TimeSeries> {
    if resolution_minutes == 0 {
        return Err(DataError::InvalidResolution);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let malformed = |line: usize, reason: String| DataError::MalformedRow {
        path: path.to_path_buf(),
        line,
        reason,
    };
    let step = resolution_minutes as i64 * 60;
    let mut start = None;
    let mut last: Option<(DateTime<Utc>, f64)> = None;
    let mut values = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record?;
        if record.len() != 2 {
            return Err(malformed(line, format!("expected 2 fields, got {}", record.len())));
        }
        let t = parse_timestamp(&record[0])
            .ok_or_else(|| malformed(line, format!("bad timestamp {:?}", &record[0])))?;
        let v: f64 = record[1]
            .parse()
            .map_err(|_| malformed(line, format!("bad value {:?}", &record[1])))?;
        if !v.is_finite() {
            return Err(malformed(line, "non-finite value".into()));
        }
        if matches!(kind, SignalKind::Pv | SignalKind::Ev) && v < 0.0 {
            return Err(DataError::NegativeValue {
                kind,
                index: values.len(),
                value: v,
            });
        }
        if let Some((prev_t, prev_v)) = last {
            let dt = (t - prev_t).num_seconds();
            if dt <= 0 {
                return Err(DataError::Unsorted {
                    path: path.to_path_buf(),
                    line,
                });
            }
            if dt % step != 0 {
                return Err(DataError::OffGrid {
                    path: path.to_path_buf(),
                    line,
                    resolution_minutes,
                });
            }
            let missing = (dt / step - 1) as usize;
            if missing > MAX_INTERPOLATED_GAP {
                return Err(DataError::GapTooLong {
                    path: path.to_path_buf(),
                    line,
                    missing,
                });
            }
            for k in 1..=missing {
                let w = k as f64 / (missing + 1) as f64;
                values.push(prev_v + (v - prev_v) * w);
            }
        } else {
            start = Some(t);
        }
        values.push(v);
        last = Some((t, v));
    }
    let start = start.ok_or(DataError::Empty)?;
    TimeSeries::new(kind, resolution_minutes, start, values)
}

pub fn write_series_csv(path: &Path, series: &TimeSeries) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["timestamp", "value"])?;
    for (i, v) in series.values().iter().enumerate() {
        let t = series.timestamp(i).format(TIMESTAMP_FORMAT).to_string();
        w.write_record([t, v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

/// Writes `<dir>/<prosumer_id>/<signal>.csv` for every present signal.
pub fn write_dataset_dir(dir: &Path, datasets: &[ProsumerDataset]) -> Result<()> {
    for ds in datasets {
        let sub = dir.join(&ds.prosumer_id);
        fs::create_dir_all(&sub)?;
        for kind in SignalKind::ALL {
            if let Some(series) = ds.signal(kind) {
                write_series_csv(&sub.join(format!("{}.csv", kind.file_stem())), series)?;
            }
        }
    }
    Ok(())
}

/// Loads every prosumer subdirectory (sorted by name) at the default signal resolutions.
pub fn load_dataset_dir(dir: &Path) -> Result<Vec<ProsumerDataset>> {
    let mut subdirs: Vec<PathBuf> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let load = |sub: &Path, kind: SignalKind| -> Result<Option<TimeSeries>> {
        let file = sub.join(format!("{}.csv", kind.file_stem()));
        if file.exists() {
            load_csv(&file, kind, kind.default_resolution_minutes()).map(Some)
        } else {
            Ok(None)
        }
    };
    subdirs
        .iter()
        .map(|sub| {
            let prosumer_id = sub
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_default();
            let consumption = load(sub, SignalKind::Consumption)?
                .ok_or_else(|| DataError::MissingConsumption(sub.clone()))?;
            Ok(ProsumerDataset {
                prosumer_id,
                pv: load(sub, SignalKind::Pv)?,
                consumption,
                ev: load(sub, SignalKind::Ev)?,
            })
        })
        .collect()
}
