//! Dataset ingestion, chronological splitting, train-statistic
//! standardization, sliding-window sampling, and synthetic fixtures.
//!
//! CSV convention: UTF-8 with a header row, first column `date` holding
//! ISO-8601 timestamps at a constant step, remaining columns one variable
//! each.

use std::path::Path;

use chrono::{Datelike, Duration, NaiveDate, NaiveDateTime, Timelike};

use crate::error::{Error, Result};
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Train/val/test proportions. The benchmark protocols use (0.7, 0.1, 0.2),
/// (0.6, 0.2, 0.2), and (0.4, 0.4, 0.2).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitRatios(pub f64, pub f64, pub f64);

impl SplitRatios {
    pub fn validate(&self) -> Result<()> {
        let SplitRatios(a, b, c) = *self;
        if a <= 0.0 || b <= 0.0 || c <= 0.0 {
            return Err(Error::Config("split ratios must be positive".into()));
        }
        if (a + b + c - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split ratios {a}+{b}+{c} do not sum to 1"
            )));
        }
        Ok(())
    }
}

/// Standardization state attached after `split_and_standardize`.
#[derive(Debug, Clone)]
struct Normalization {
    ratios: SplitRatios,
    /// First row of val, first row of test.
    cuts: (usize, usize),
    mean: Vec<f64>,
    std: Vec<f64>,
    /// Unstandardized values, kept so protocol comparisons can check the raw
    /// split content.
    raw: Vec<f64>,
}

/// Aligned timestamped multivariate observations, `rows x n_vars` row-major.
#[derive(Debug, Clone)]
pub struct SeriesDataset {
    timestamps: Vec<NaiveDateTime>,
    names: Vec<String>,
    values: Vec<f64>,
    n_vars: usize,
    step: Duration,
    norm: Option<Normalization>,
}

/// One training example: lookback block, target block, and the timestamp
/// features of both, variable-major (`[N][len]` row-major).
#[derive(Debug, Clone)]
pub struct WindowSample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub ts_x: Vec<[usize; 5]>,
    pub ts_y: Vec<[usize; 5]>,
}

/// month, day-of-month, weekday, hour, minute — the index streams feeding
/// the learned timestamp tables.
pub fn time_features(t: &NaiveDateTime) -> [usize; 5] {
    [
        t.month() as usize,
        t.day() as usize,
        t.weekday().num_days_from_monday() as usize,
        t.hour() as usize,
        t.minute() as usize,
    ]
}

const TIMESTAMP_FORMATS: [&str; 4] = [
    "%Y-%m-%d %H:%M:%S",
    "%Y-%m-%dT%H:%M:%S",
    "%Y-%m-%d %H:%M",
    "%Y-%m-%d",
];

fn parse_timestamp(text: &str) -> Option<NaiveDateTime> {
    for fmt in TIMESTAMP_FORMATS {
        if fmt.contains('H') {
            if let Ok(t) = NaiveDateTime::parse_from_str(text, fmt) {
                return Some(t);
            }
        } else if let Ok(d) = NaiveDate::parse_from_str(text, fmt) {
            return Some(d.and_hms_opt(0, 0, 0).unwrap());
        }
    }
    None
}

impl SeriesDataset {
    /// Assemble from parts; validates monotone timestamps with constant step.
    pub fn new(
        timestamps: Vec<NaiveDateTime>,
        names: Vec<String>,
        values: Vec<f64>,
    ) -> Result<SeriesDataset> {
        let n_vars = names.len();
        if n_vars == 0 {
            return Err(Error::Data {
                row: None,
                message: "dataset needs at least one variable".into(),
            });
        }
        if timestamps.len() < 2 {
            return Err(Error::Data {
                row: None,
                message: "dataset needs at least two rows".into(),
            });
        }
        if values.len() != timestamps.len() * n_vars {
            return Err(Error::Data {
                row: None,
                message: format!(
                    "{} values do not fill {} rows x {} variables",
                    values.len(),
                    timestamps.len(),
                    n_vars
                ),
            });
        }
        let step = timestamps[1] - timestamps[0];
        if step <= Duration::zero() {
            return Err(Error::Data {
                row: Some(2),
                message: "timestamps must be strictly increasing".into(),
            });
        }
        for (i, pair) in timestamps.windows(2).enumerate() {
            let delta = pair[1] - pair[0];
            if delta != step {
                let what = if delta <= Duration::zero() {
                    "duplicate or non-monotone timestamp"
                } else {
                    "gap in timestamps"
                };
                return Err(Error::Data {
                    row: Some(i + 2),
                    message: format!("{what} (expected step {step})"),
                });
            }
        }
        if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data {
                row: Some(bad / n_vars + 1),
                message: "non-finite value".into(),
            });
        }
        Ok(SeriesDataset {
            timestamps,
            names,
            values,
            n_vars,
            step,
            norm: None,
        })
    }

    pub fn load_csv(path: &Path) -> Result<SeriesDataset> {
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(true)
            .flexible(false)
            .from_path(path)
            .map_err(|e| Error::Data {
                row: None,
                message: format!("cannot open {}: {e}", path.display()),
            })?;
        let headers = reader
            .headers()
            .map_err(|e| Error::Data {
                row: None,
                message: format!("unreadable header: {e}"),
            })?
            .clone();
        if headers.is_empty() || headers.get(0) != Some("date") {
            return Err(Error::Data {
                row: None,
                message: "first column must be named 'date'".into(),
            });
        }
        let names: Vec<String> = headers.iter().skip(1).map(str::to_string).collect();
        let mut timestamps = Vec::new();
        let mut values = Vec::new();
        for (i, record) in reader.records().enumerate() {
            let row = i + 1;
            let record = record.map_err(|e| Error::Data {
                row: Some(row),
                message: format!("malformed record: {e}"),
            })?;
            let stamp_text = record.get(0).unwrap_or_default();
            let stamp = parse_timestamp(stamp_text).ok_or_else(|| Error::Data {
                row: Some(row),
                message: format!("unparseable timestamp {stamp_text:?}"),
            })?;
            timestamps.push(stamp);
            for cell in record.iter().skip(1) {
                let v: f64 = cell.trim().parse().map_err(|_| Error::Data {
                    row: Some(row),
                    message: format!("non-numeric cell {cell:?}"),
                })?;
                values.push(v);
            }
        }
        SeriesDataset::new(timestamps, names, values)
    }

    /// Write the current values (raw or standardized) back out in the same
    /// CSV convention. f64 formatting is shortest-round-trip, so
    /// load -> save -> load reproduces values exactly.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut writer = csv::Writer::from_path(path).map_err(csv_io)?;
        let mut header = vec!["date".to_string()];
        header.extend(self.names.iter().cloned());
        writer.write_record(&header).map_err(csv_io)?;
        for r in 0..self.rows() {
            let mut record = vec![self.timestamps[r].format("%Y-%m-%d %H:%M:%S").to_string()];
            for v in &self.values[r * self.n_vars..(r + 1) * self.n_vars] {
                record.push(format!("{v}"));
            }
            writer.write_record(&record).map_err(csv_io)?;
        }
        writer.flush()?;
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn timestamps(&self) -> &[NaiveDateTime] {
        &self.timestamps
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn step(&self) -> Duration {
        self.step
    }

    pub fn is_standardized(&self) -> bool {
        self.norm.is_some()
    }

    /// Train-split mean per variable (of the current values).
    pub fn train_statistics(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        let norm = self.norm.as_ref().ok_or_else(|| Error::Data {
            row: None,
            message: "dataset has no splits yet".into(),
        })?;
        Ok((norm.mean.clone(), norm.std.clone()))
    }

    pub fn ratios(&self) -> Option<SplitRatios> {
        self.norm.as_ref().map(|n| n.ratios)
    }

    /// Row range of a split.
    pub fn split_bounds(&self, split: Split) -> Result<(usize, usize)> {
        let norm = self.norm.as_ref().ok_or_else(|| Error::Data {
            row: None,
            message: "dataset has no splits yet".into(),
        })?;
        let (val_start, test_start) = norm.cuts;
        Ok(match split {
            Split::Train => (0, val_start),
            Split::Val => (val_start, test_start),
            Split::Test => (test_start, self.rows()),
        })
    }

    /// Unstandardized values of the test rows, for protocol comparisons.
    pub fn raw_test_rows(&self) -> Result<Vec<f64>> {
        let (start, end) = self.split_bounds(Split::Test)?;
        let norm = self.norm.as_ref().expect("split_bounds checked");
        Ok(norm.raw[start * self.n_vars..end * self.n_vars].to_vec())
    }

    /// Chronological cut at floor(ratio * rows), then z-score every split by
    /// the train split's per-variable statistics (std floored at 1e-5).
    pub fn split_and_standardize(&self, ratios: SplitRatios) -> Result<SeriesDataset> {
        ratios.validate()?;
        let rows = self.rows();
        let val_start = (ratios.0 * rows as f64).floor() as usize;
        let test_start = val_start + (ratios.1 * rows as f64).floor() as usize;
        if val_start == 0 || test_start == val_start || test_start >= rows {
            return Err(Error::Data {
                row: None,
                message: format!(
                    "ratios {ratios:?} leave an empty split over {rows} rows"
                ),
            });
        }
        let n = self.n_vars;
        let mut mean = vec![0.0; n];
        let mut std = vec![0.0; n];
        for v in 0..n {
            let mut sum = 0.0;
            for r in 0..val_start {
                sum += self.values[r * n + v];
            }
            let mu = sum / val_start as f64;
            let mut var = 0.0;
            for r in 0..val_start {
                let d = self.values[r * n + v] - mu;
                var += d * d;
            }
            mean[v] = mu;
            std[v] = (var / val_start as f64).sqrt().max(1e-5);
        }
        let mut standardized = self.values.clone();
        for r in 0..rows {
            for v in 0..n {
                standardized[r * n + v] = (standardized[r * n + v] - mean[v]) / std[v];
            }
        }
        Ok(SeriesDataset {
            timestamps: self.timestamps.clone(),
            names: self.names.clone(),
            values: standardized,
            n_vars: n,
            step: self.step,
            norm: Some(Normalization {
                ratios,
                cuts: (val_start, test_start),
                mean,
                std,
                raw: self.values.clone(),
            }),
        })
    }

    /// Every maximal contiguous (lookback, horizon) pair inside one split,
    /// in chronological order. Windows never straddle split boundaries.
    pub fn windows(
        &self,
        split: Split,
        lookback: usize,
        horizon: usize,
        stride: usize,
    ) -> Result<Vec<WindowSample>> {
        if stride == 0 {
            return Err(Error::InvalidArgument("stride must be positive".into()));
        }
        let (start, end) = self.split_bounds(split)?;
        let len = end - start;
        let needed = lookback + horizon;
        if len < needed {
            return Err(Error::Data {
                row: None,
                message: format!(
                    "{split:?} split has {len} rows; needs at least {needed} (lookback {lookback} + horizon {horizon})"
                ),
            });
        }
        let n = self.n_vars;
        let mut out = Vec::with_capacity((len - needed) / stride + 1);
        let mut offset = 0;
        while offset + needed <= len {
            let x_start = start + offset;
            let y_start = x_start + lookback;
            let mut x = vec![0.0; n * lookback];
            let mut y = vec![0.0; n * horizon];
            for v in 0..n {
                for i in 0..lookback {
                    x[v * lookback + i] = self.values[(x_start + i) * n + v];
                }
                for i in 0..horizon {
                    y[v * horizon + i] = self.values[(y_start + i) * n + v];
                }
            }
            let ts_x = (0..lookback)
                .map(|i| time_features(&self.timestamps[x_start + i]))
                .collect();
            let ts_y = (0..horizon)
                .map(|i| time_features(&self.timestamps[y_start + i]))
                .collect();
            out.push(WindowSample { x, y, ts_x, ts_y });
            offset += stride;
        }
        Ok(out)
    }

    /// Timestamps continuing past the final row at the inferred step.
    pub fn extend_timestamps(&self, count: usize) -> Vec<NaiveDateTime> {
        let last = *self.timestamps.last().expect("validated non-empty");
        (1..=count).map(|i| last + self.step * i as i32).collect()
    }
}

fn csv_io(e: csv::Error) -> Error {
    Error::Data {
        row: None,
        message: format!("csv write failed: {e}"),
    }
}

fn base_timestamps(rows: usize) -> Vec<NaiveDateTime> {
    let start = NaiveDate::from_ymd_opt(2019, 1, 1)
        .unwrap()
        .and_hms_opt(0, 0, 0)
        .unwrap();
    (0..rows).map(|i| start + Duration::hours(i as i64)).collect()
}

fn generated_names(n_vars: usize) -> Vec<String> {
    (0..n_vars).map(|v| format!("var{v}")).collect()
}

/// The two sinusoid components of the two-tone fixture, before noise:
/// per-variable phases and signs arrange variables 0 and 1 to correlate
/// positively at the long period and negatively at the short one.
pub(crate) fn two_tone_components(
    n_vars: usize,
    rows: usize,
    periods: (usize, usize),
    rng: &mut SplitMix64,
) -> (Vec<f64>, Vec<f64>) {
    let (long, short) = periods;
    let mut phases = vec![(0.0, 0.0, 1.0); n_vars];
    for (v, slot) in phases.iter_mut().enumerate() {
        *slot = match v {
            0 => (0.0, 0.0, 1.0),
            1 => (0.0, 0.0, -1.0),
            _ => (
                rng.uniform(0.0, std::f64::consts::TAU),
                rng.uniform(0.0, std::f64::consts::TAU),
                if rng.next_f64() < 0.5 { 1.0 } else { -1.0 },
            ),
        };
    }
    let mut long_part = vec![0.0; rows * n_vars];
    let mut short_part = vec![0.0; rows * n_vars];
    for r in 0..rows {
        for (v, &(phase_long, phase_short, sign)) in phases.iter().enumerate() {
            let t = r as f64;
            long_part[r * n_vars + v] =
                (std::f64::consts::TAU * t / long as f64 + phase_long).sin();
            short_part[r * n_vars + v] =
                sign * 0.5 * (std::f64::consts::TAU * t / short as f64 + phase_short).sin();
        }
    }
    (long_part, short_part)
}

/// Mixture of two sinusoids per variable plus seeded noise. Variables 0 and
/// 1 correlate positively at `periods.0` and negatively at `periods.1`.
pub fn synth_two_tone(
    n_vars: usize,
    rows: usize,
    periods: (usize, usize),
    noise: f64,
    seed: u64,
) -> Result<SeriesDataset> {
    let mut rng = SplitMix64::new(seed);
    let (long_part, short_part) = two_tone_components(n_vars, rows, periods, &mut rng);
    let values: Vec<f64> = long_part
        .iter()
        .zip(&short_part)
        .map(|(l, s)| l + s + noise * rng.normal())
        .collect();
    SeriesDataset::new(base_timestamps(rows), generated_names(n_vars), values)
}

/// Periodic series with a sustained level drop partway through — the
/// distribution-shift structure used by the split-modification protocol.
/// The drop lands at `shift_at` (fraction of rows), so a 0.4/0.4/0.2 split
/// trains entirely on pre-shift data while 0.7/0.1/0.2 does not.
pub fn synth_level_shift(
    n_vars: usize,
    rows: usize,
    shift_at: f64,
    drop: f64,
    noise: f64,
    seed: u64,
) -> Result<SeriesDataset> {
    let mut rng = SplitMix64::new(seed);
    let shift_row = (rows as f64 * shift_at) as usize;
    let mut values = vec![0.0; rows * n_vars];
    let phases: Vec<f64> = (0..n_vars)
        .map(|_| rng.uniform(0.0, std::f64::consts::TAU))
        .collect();
    for r in 0..rows {
        for v in 0..n_vars {
            let t = r as f64;
            let base = (std::f64::consts::TAU * t / 24.0 + phases[v]).sin()
                + 0.4 * (std::f64::consts::TAU * t / 12.0 + 2.0 * phases[v]).sin();
            let level = if r >= shift_row { -drop } else { 0.0 };
            values[r * n_vars + v] = base + level + noise * rng.normal();
        }
    }
    SeriesDataset::new(base_timestamps(rows), generated_names(n_vars), values)
}

/// Every observation the same constant; the trivially learnable fixture.
pub fn synth_constant(n_vars: usize, rows: usize, value: f64) -> Result<SeriesDataset> {
    SeriesDataset::new(
        base_timestamps(rows),
        generated_names(n_vars),
        vec![value; rows * n_vars],
    )
}
