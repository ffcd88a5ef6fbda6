//! Per-prosumer signals, min-max normalization and supervised sliding windows.

mod csv_io;
mod synthetic;

use std::fmt;
use std::path::PathBuf;

use chrono::{DateTime, Duration, Utc};
use serde::{Deserialize, Serialize};

pub use csv_io::{load_csv, load_dataset_dir, write_dataset_dir, write_series_csv, MAX_INTERPOLATED_GAP};
pub use synthetic::{generate_synthetic_pcg, SyntheticConfig, SYNTHETIC_START};

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("time series is empty")]
    Empty,
    #[error("resolution must be positive")]
    InvalidResolution,
    #[error("negative {kind} value {value} at index {index}")]
    NegativeValue { kind: SignalKind, index: usize, value: f64 },
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("{path}: line {line}: malformed row: {reason}")]
    MalformedRow { path: PathBuf, line: usize, reason: String },
    #[error("{path}: line {line}: timestamps are not strictly ascending")]
    Unsorted { path: PathBuf, line: usize },
    #[error("{path}: line {line}: timestamp is not on the {resolution_minutes}-minute grid")]
    OffGrid { path: PathBuf, line: usize, resolution_minutes: u32 },
    #[error("{path}: line {line}: gap too long ({missing} missing samples)")]
    GapTooLong { path: PathBuf, line: usize, missing: usize },
    #[error("series too short: {len} samples, need at least {needed}")]
    TooShort { len: usize, needed: usize },
    #[error("window lookback and horizon must be positive")]
    InvalidWindow,
    #[error("train fraction {0} outside (0, 1)")]
    InvalidFraction(f64),
    #[error("split leaves an empty side ({train} train, {test} test)")]
    EmptySplit { train: usize, test: usize },
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
    #[error("dataset directory {0} has no consumption.csv")]
    MissingConsumption(PathBuf),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = DataError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignalKind {
    Pv,
    Consumption,
    Ev,
}

impl SignalKind {
    pub const ALL: [SignalKind; 3] = [SignalKind::Pv, SignalKind::Consumption, SignalKind::Ev];

    /// File stem used in dataset directories.
    pub fn file_stem(self) -> &'static str {
        match self {
            SignalKind::Pv => "pv",
            SignalKind::Consumption => "consumption",
            SignalKind::Ev => "ev",
        }
    }

    /// Native sampling interval of the signal in the PCG dataset.
    pub fn default_resolution_minutes(self) -> u32 {
        match self {
            SignalKind::Ev => 1,
            _ => 15,
        }
    }

    fn must_be_non_negative(self) -> bool {
        // consumption is non-negative physically, but metered net loads are tolerated
        matches!(self, SignalKind::Pv | SignalKind::Ev)
    }
}

impl fmt::Display for SignalKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.file_stem())
    }
}

/// Gap-free, equally spaced power samples in kW.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeries {
    kind: SignalKind,
    resolution_minutes: u32,
    start: DateTime<Utc>,
    values: Vec<f64>,
}

impl TimeSeries {
    pub fn new(
        kind: SignalKind,
        resolution_minutes: u32,
        start: DateTime<Utc>,
        values: Vec<f64>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(DataError::Empty);
        }
        if resolution_minutes == 0 {
            return Err(DataError::InvalidResolution);
        }
        for (index, &value) in values.iter().enumerate() {
            if !value.is_finite() {
                return Err(DataError::NonFinite { index });
            }
            if kind.must_be_non_negative() && value < 0.0 {
                return Err(DataError::NegativeValue { kind, index, value });
            }
        }
        Ok(Self {
            kind,
            resolution_minutes,
            start,
            values,
        })
    }

    pub fn kind(&self) -> SignalKind {
        self.kind
    }

    pub fn resolution_minutes(&self) -> u32 {
        self.resolution_minutes
    }

    pub fn start(&self) -> DateTime<Utc> {
        self.start
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn resolution(&self) -> Duration {
        Duration::minutes(self.resolution_minutes as i64)
    }

    pub fn timestamp(&self, index: usize) -> DateTime<Utc> {
        self.start + self.resolution() * index as i32
    }

    /// Index of the sample stamped exactly at `t`, if it lies on this series' grid.
    pub fn index_of(&self, t: DateTime<Utc>) -> Option<usize> {
        let offset = (t - self.start).num_minutes();
        let res = self.resolution_minutes as i64;
        if offset < 0 || offset % res != 0 || (t - self.start).num_seconds() % 60 != 0 {
            return None;
        }
        let idx = (offset / res) as usize;
        (idx < self.values.len()).then_some(idx)
    }
}

/// Min-max scaling fitted on training data.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalizationParams {
    pub min_value: f64,
    pub max_value: f64,
}

impl NormalizationParams {
    pub fn fit(train_values: &[f64]) -> Result<Self> {
        let mut it = train_values.iter().copied();
        let first = it.next().ok_or(DataError::Empty)?;
        let (min_value, max_value) = it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v)));
        Ok(Self {
            min_value,
            max_value,
        })
    }

    pub fn is_constant(&self) -> bool {
        self.max_value == self.min_value
    }

    fn span(&self) -> f64 {
        self.max_value - self.min_value
    }

    /// Constant series map to 0.5.
    pub fn normalize(&self, x: f64) -> f64 {
        if self.is_constant() {
            0.5
        } else {
            (x - self.min_value) / self.span()
        }
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        if self.is_constant() {
            self.min_value
        } else {
            y * self.span() + self.min_value
        }
    }
}

pub fn fit_normalization(train_values: &[f64]) -> Result<NormalizationParams> {
    NormalizationParams::fit(train_values)
}

/// Supervised (input, target) pairs cut from one series, already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    pub lookback: usize,
    pub horizon: usize,
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub norm: NormalizationParams,
    /// Timestamp of the first target sample of pair 0.
    pub first_target: DateTime<Utc>,
    pub resolution_minutes: u32,
}

impl WindowedDataset {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn target_time(&self, pair: usize) -> DateTime<Utc> {
        self.first_target + Duration::minutes(self.resolution_minutes as i64 * pair as i64)
    }

    fn slice(&self, range: std::ops::Range<usize>) -> WindowedDataset {
        WindowedDataset {
            lookback: self.lookback,
            horizon: self.horizon,
            inputs: self.inputs[range.clone()].to_vec(),
            targets: self.targets[range.clone()].to_vec(),
            norm: self.norm,
            first_target: self.target_time(range.start),
            resolution_minutes: self.resolution_minutes,
        }
    }

    /// Concatenates datasets with the same window shape. Pairs keep the scaling they were built
    /// with; the result carries the first part's `norm` and time origin.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a WindowedDataset>) -> Option<WindowedDataset> {
        let mut iter = parts.into_iter();
        let mut out = iter.next()?.clone();
        for ds in iter {
            out.inputs.extend(ds.inputs.iter().cloned());
            out.targets.extend(ds.targets.iter().cloned());
        }
        Some(out)
    }
}

/// Number of (input, target) pairs a series of length `len` yields.
pub fn window_count(len: usize, lookback: usize, horizon: usize) -> usize {
    (len + 1).saturating_sub(lookback + horizon)
}

pub fn make_windows(
    series: &TimeSeries,
    lookback: usize,
    horizon: usize,
    norm: NormalizationParams,
) -> Result<WindowedDataset> {
    if lookback == 0 || horizon == 0 {
        return Err(DataError::InvalidWindow);
    }
    let values = series.values();
    // one pair needs lookback inputs and horizon targets; the boundary len == lookback is too short
    let needed = lookback + horizon;
    if values.len() < needed {
        return Err(DataError::TooShort {
            len: values.len(),
            needed,
        });
    }
    let scaled: Vec<f64> = values.iter().map(|&v| norm.normalize(v)).collect();
    let n = window_count(values.len(), lookback, horizon);
    let inputs = (0..n).map(|i| scaled[i..i + lookback].to_vec()).collect();
    let targets = (0..n)
        .map(|i| scaled[i + lookback..i + lookback + horizon].to_vec())
        .collect();
    Ok(WindowedDataset {
        lookback,
        horizon,
        inputs,
        targets,
        norm,
        first_target: series.timestamp(lookback),
        resolution_minutes: series.resolution_minutes(),
    })
}

/// Number of training pairs for a chronological split.
pub fn train_len(n_pairs: usize, train_fraction: f64) -> usize {
    // tolerate representation error in fractions such as 0.29
    (n_pairs as f64 * train_fraction + 1e-9).floor() as usize
}

/// Chronological split. The first `horizon - 1` pairs after the boundary are dropped so that no
/// test target coincides with a training target.
pub fn split_train_test(
    ds: &WindowedDataset,
    train_fraction: f64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let n = ds.len();
    let n_train = train_len(n, train_fraction);
    let test_start = (n_train + ds.horizon - 1).min(n);
    if n_train == 0 || test_start >= n {
        return Err(DataError::EmptySplit {
            train: n_train,
            test: n - test_start,
        });
    }
    Ok((ds.slice(0..n_train), ds.slice(test_start..n)))
}

/// Windows a series, fitting normalization on the samples reachable from training pairs only.
pub fn prepare_windows(
    series: &TimeSeries,
    lookback: usize,
    horizon: usize,
    train_fraction: f64,
) -> Result<(WindowedDataset, WindowedDataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let n = window_count(series.len(), lookback, horizon);
    let n_train = train_len(n, train_fraction);
    if n == 0 || n_train == 0 {
        return Err(DataError::TooShort {
            len: series.len(),
            needed: lookback + horizon,
        });
    }
    let train_span = n_train - 1 + lookback + horizon;
    let norm = NormalizationParams::fit(&series.values()[..train_span])?;
    let all = make_windows(series, lookback, horizon, norm)?;
    split_train_test(&all, train_fraction)
}

/// One prosumer's metered signals.
#[derive(Debug, Clone, PartialEq)]
pub struct ProsumerDataset {
    pub prosumer_id: String,
    pub pv: Option<TimeSeries>,
    pub consumption: TimeSeries,
    pub ev: Option<TimeSeries>,
}

impl ProsumerDataset {
    pub fn signal(&self, kind: SignalKind) -> Option<&TimeSeries> {
        match kind {
            SignalKind::Pv => self.pv.as_ref(),
            SignalKind::Consumption => Some(&self.consumption),
            SignalKind::Ev => self.ev.as_ref(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn series(len: usize) -> TimeSeries {
        let values = (0..len).map(|i| i as f64).collect();
        TimeSeries::new(SignalKind::Consumption, 15, SYNTHETIC_START, values).unwrap()
    }

    #[test]
    fn normalization_examples() {
        let p = fit_normalization(&[0.0, 5.0, 10.0]).unwrap();
        assert_eq!((p.min_value, p.max_value), (0.0, 10.0));
        assert_eq!(p.normalize(5.0), 0.5);
        assert_eq!(p.normalize(10.0), 1.0);

        let c = fit_normalization(&[3.0, 3.0, 3.0]).unwrap();
        assert!(c.is_constant());
        assert_eq!(c.normalize(3.0), 0.5);
        assert_eq!(c.denormalize(0.5), 3.0);

        // any reals are accepted here; sign checks belong to ingestion
        let n = fit_normalization(&[-1.0, 0.0]).unwrap();
        assert_eq!(n.min_value, -1.0);

        let q = NormalizationParams {
            min_value: 2.0,
            max_value: 9.0,
        };
        assert!((q.denormalize(q.normalize(7.3)) - 7.3).abs() <= 7.3 * 1e-12);
        assert!(matches!(fit_normalization(&[]), Err(DataError::Empty)));
    }

    #[test]
    fn window_counts() {
        let norm = NormalizationParams {
            min_value: 0.0,
            max_value: 99.0,
        };
        assert_eq!(make_windows(&series(100), 48, 1, norm).unwrap().len(), 52);
        assert_eq!(make_windows(&series(100), 15, 5, norm).unwrap().len(), 81);
        assert!(matches!(
            make_windows(&series(48), 48, 1, norm),
            Err(DataError::TooShort { .. })
        ));
    }

    #[test]
    fn windows_are_contiguous_and_precede_targets() {
        let norm = NormalizationParams {
            min_value: 0.0,
            max_value: 1.0,
        };
        let ds = make_windows(&series(30), 6, 3, norm).unwrap();
        for (i, (x, y)) in ds.inputs.iter().zip(&ds.targets).enumerate() {
            let expect_x: Vec<f64> = (i..i + 6).map(|v| v as f64).collect();
            let expect_y: Vec<f64> = (i + 6..i + 9).map(|v| v as f64).collect();
            assert_eq!(x, &expect_x);
            assert_eq!(y, &expect_y);
        }
        assert_eq!(ds.first_target, SYNTHETIC_START + Duration::minutes(90));
    }

    #[test]
    fn split_examples() {
        let norm = NormalizationParams {
            min_value: 0.0,
            max_value: 1.0,
        };
        let ds = make_windows(&series(100), 48, 1, norm).unwrap();
        let (tr, te) = split_train_test(&ds, 0.9).unwrap();
        assert_eq!((tr.len(), te.len()), (46, 6));

        let ten = make_windows(&series(11), 1, 1, norm).unwrap();
        assert_eq!(ten.len(), 10);
        let (tr, te) = split_train_test(&ten, 0.9).unwrap();
        assert_eq!((tr.len(), te.len()), (9, 1));
        assert!(matches!(
            split_train_test(&ten, 1.0),
            Err(DataError::InvalidFraction(_))
        ));
        assert!(matches!(
            split_train_test(&ten, 0.0),
            Err(DataError::InvalidFraction(_))
        ));
    }

    #[test]
    fn multi_step_split_purges_overlapping_targets() {
        let norm = NormalizationParams {
            min_value: 0.0,
            max_value: 1.0,
        };
        let ds = make_windows(&series(100), 15, 5, norm).unwrap();
        let (tr, te) = split_train_test(&ds, 0.9).unwrap();
        assert_eq!(tr.len(), 72);
        assert_eq!(te.len(), 81 - 72 - 4);
        let last_train_target = tr.targets.last().unwrap().last().unwrap();
        assert!(te.targets[0][0] > *last_train_target);
    }

    #[test]
    fn prepare_fits_on_training_span_only() {
        let s = series(200);
        let (tr, te) = prepare_windows(&s, 48, 1, 0.9).unwrap();
        // 152 pairs, 136 train; the last training target is sample 183
        assert_eq!(tr.len(), 136);
        assert_eq!(tr.norm.max_value, 183.0);
        assert!(te.inputs.iter().flatten().any(|&v| v > 1.0));
    }

    #[test]
    fn series_validation() {
        assert!(matches!(
            TimeSeries::new(SignalKind::Pv, 15, SYNTHETIC_START, vec![1.0, -0.1]),
            Err(DataError::NegativeValue { index: 1, .. })
        ));
        assert!(matches!(
            TimeSeries::new(SignalKind::Pv, 15, SYNTHETIC_START, vec![]),
            Err(DataError::Empty)
        ));
        assert!(matches!(
            TimeSeries::new(SignalKind::Pv, 0, SYNTHETIC_START, vec![1.0]),
            Err(DataError::InvalidResolution)
        ));
        let s = series(10);
        assert_eq!(s.index_of(s.timestamp(7)), Some(7));
        assert_eq!(s.index_of(s.timestamp(7) + Duration::minutes(1)), None);
    }

    proptest! {
        #[test]
        fn window_count_formula(len in 2usize..400, lookback in 1usize..60, horizon in 1usize..8) {
            prop_assume!(len >= lookback + horizon);
            let norm = NormalizationParams { min_value: 0.0, max_value: 1.0 };
            let ds = make_windows(&series(len), lookback, horizon, norm).unwrap();
            prop_assert_eq!(ds.len(), len - lookback - horizon + 1);
            prop_assert_eq!(ds.targets.len(), ds.inputs.len());
        }

        #[test]
        fn normalize_round_trip(lo in -1e3f64..1e3, width in 1e-3f64..1e3, t in -0.5f64..1.5) {
            let p = NormalizationParams { min_value: lo, max_value: lo + width };
            let x = lo + t * width;
            let back = p.denormalize(p.normalize(x));
            prop_assert!((back - x).abs() <= 1e-12 * x.abs().max(p.max_value.abs()).max(p.min_value.abs()));
        }

        #[test]
        fn test_targets_follow_training_targets(len in 30usize..300, lookback in 1usize..20, horizon in 1usize..6, frac in 0.3f64..0.9) {
            let norm = NormalizationParams { min_value: 0.0, max_value: 1.0 };
            let ds = make_windows(&series(len), lookback, horizon, norm).unwrap();
            if let Ok((tr, te)) = split_train_test(&ds, frac) {
                let last = tr.targets.last().unwrap().last().unwrap();
                prop_assert!(te.targets.iter().flatten().all(|v| v > last));
                prop_assert!(te.first_target > tr.target_time(tr.len() - 1));
            }
        }
    }
}
