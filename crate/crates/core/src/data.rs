//! OHLCV ingestion, price scaling and window slicing.
//!
//! The pipeline is: parse a CSV into a [`PriceSeries`], fit a
//! [`ScaleTransform`] on the training prefix of the close prices, slice the
//! scaled closes into fixed-length input/target [`WindowPair`]s and split
//! them chronologically into train and validation sets.

use std::fmt;
use std::path::Path;

use chrono::{DateTime, NaiveDateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("failed to read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed row at line {line}: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("missing column {0:?} in header")]
    MissingColumn(String),
    #[error("duplicate or non-increasing timestamp at line {line} ({timestamp})")]
    DuplicateTimestamp { line: usize, timestamp: String },
    #[error("non-positive price at line {line}: {field}={value}")]
    NonPositivePrice {
        line: usize,
        field: &'static str,
        value: f64,
    },
    #[error("OHLC order violation at line {line}: low={low} high={high} open={open} close={close}")]
    OhlcOrderViolation {
        line: usize,
        low: f64,
        high: f64,
        open: f64,
        close: f64,
    },
    #[error("series is empty")]
    EmptySeries,
    #[error("training prefix has a constant close price; cannot scale")]
    ConstantSeries,
    #[error("series of length {len} is too short for windows of {required}")]
    SeriesTooShort { len: usize, required: usize },
    #[error("need at least 2 windows to split, got {0}")]
    TooFewWindows(usize),
    #[error("invalid train fraction {0}; must be in (0, 1]")]
    InvalidFraction(f64),
}

/// One market interval: timestamps are UTC, prices strictly positive and
/// low <= min(open, close) <= max(open, close) <= high.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OhlcvRecord {
    pub timestamp: DateTime<Utc>,
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
}

/// Ordered price records for one instrument, timestamps strictly increasing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PriceSeries {
    pub instrument: String,
    records: Vec<OhlcvRecord>,
}

impl PriceSeries {
    /// Builds a series, validating ordering and per-record invariants.
    /// Records must already be sorted by timestamp.
    pub fn new(instrument: impl Into<String>, records: Vec<OhlcvRecord>) -> Result<Self, DataError> {
        for (i, r) in records.iter().enumerate() {
            validate_record(r, i + 1)?;
            if i > 0 && records[i - 1].timestamp >= r.timestamp {
                return Err(DataError::DuplicateTimestamp {
                    line: i + 1,
                    timestamp: r.timestamp.to_rfc3339(),
                });
            }
        }
        Ok(PriceSeries {
            instrument: instrument.into(),
            records,
        })
    }

    pub fn records(&self) -> &[OhlcvRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn closes(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.close).collect()
    }
}

fn validate_record(r: &OhlcvRecord, line: usize) -> Result<(), DataError> {
    for (field, value) in [
        ("open", r.open),
        ("high", r.high),
        ("low", r.low),
        ("close", r.close),
    ] {
        if !value.is_finite() || value <= 0.0 {
            return Err(DataError::NonPositivePrice { line, field, value });
        }
    }
    if !r.volume.is_finite() || r.volume < 0.0 {
        return Err(DataError::NonPositivePrice {
            line,
            field: "volume",
            value: r.volume,
        });
    }
    let body_low = r.open.min(r.close);
    let body_high = r.open.max(r.close);
    if r.low > body_low || r.high < body_high {
        return Err(DataError::OhlcOrderViolation {
            line,
            low: r.low,
            high: r.high,
            open: r.open,
            close: r.close,
        });
    }
    Ok(())
}

/// Column names for CSV ingestion. Defaults to the canonical header
/// `timestamp,open,high,low,close,volume`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct CsvSchema {
    pub timestamp: String,
    pub open: String,
    pub high: String,
    pub low: String,
    pub close: String,
    pub volume: String,
}

impl Default for CsvSchema {
    fn default() -> Self {
        CsvSchema {
            timestamp: "timestamp".into(),
            open: "open".into(),
            high: "high".into(),
            low: "low".into(),
            close: "close".into(),
            volume: "volume".into(),
        }
    }
}

fn parse_timestamp(text: &str, line: usize) -> Result<DateTime<Utc>, DataError> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(text) {
        return Ok(dt.with_timezone(&Utc));
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S"] {
        if let Ok(naive) = NaiveDateTime::parse_from_str(text, fmt) {
            return Ok(naive.and_utc());
        }
    }
    Err(DataError::MalformedRow {
        line,
        reason: format!("unparseable timestamp {text:?}"),
    })
}

/// Parses an OHLCV CSV file. Rows are sorted by timestamp before
/// validation, so an unordered file still loads; true duplicates fail.
pub fn parse_csv(
    path: impl AsRef<Path>,
    schema: &CsvSchema,
    instrument: impl Into<String>,
) -> Result<PriceSeries, DataError> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_csv_reader(file, schema, instrument)
}

/// Same as [`parse_csv`] but over any reader (used by tests and the CLI's
/// stdin mode).
pub fn parse_csv_reader(
    reader: impl std::io::Read,
    schema: &CsvSchema,
    instrument: impl Into<String>,
) -> Result<PriceSeries, DataError> {
    let mut csv_reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let headers = csv_reader
        .headers()
        .map_err(|e| DataError::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?
        .clone();
    let col = |name: &str| -> Result<usize, DataError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DataError::MissingColumn(name.to_string()))
    };
    let idx_ts = col(&schema.timestamp)?;
    let idx_open = col(&schema.open)?;
    let idx_high = col(&schema.high)?;
    let idx_low = col(&schema.low)?;
    let idx_close = col(&schema.close)?;
    let idx_volume = col(&schema.volume)?;

    let mut rows: Vec<(usize, OhlcvRecord)> = Vec::new();
    for (i, result) in csv_reader.records().enumerate() {
        let line = i + 2; // 1-based, after the header
        let record = result.map_err(|e| DataError::MalformedRow {
            line,
            reason: e.to_string(),
        })?;
        let field = |idx: usize, name: &str| -> Result<&str, DataError> {
            record.get(idx).ok_or_else(|| DataError::MalformedRow {
                line,
                reason: format!("missing field {name}"),
            })
        };
        let number = |idx: usize, name: &str| -> Result<f64, DataError> {
            let text = field(idx, name)?;
            text.parse::<f64>().map_err(|_| DataError::MalformedRow {
                line,
                reason: format!("{name} is not a number: {text:?}"),
            })
        };
        let rec = OhlcvRecord {
            timestamp: parse_timestamp(field(idx_ts, "timestamp")?, line)?,
            open: number(idx_open, "open")?,
            high: number(idx_high, "high")?,
            low: number(idx_low, "low")?,
            close: number(idx_close, "close")?,
            volume: number(idx_volume, "volume")?,
        };
        validate_record(&rec, line)?;
        rows.push((line, rec));
    }

    rows.sort_by_key(|(_, r)| r.timestamp);
    for pair in rows.windows(2) {
        if pair[0].1.timestamp == pair[1].1.timestamp {
            return Err(DataError::DuplicateTimestamp {
                line: pair[1].0,
                timestamp: pair[1].1.timestamp.to_rfc3339(),
            });
        }
    }

    PriceSeries::new(instrument, rows.into_iter().map(|(_, r)| r).collect())
}

/// Min-max rescale fitted on the training prefix of a series. Values
/// outside the fitted range map outside [0, 1]; that is intentional, the
/// model's inputs are not range-restricted.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleTransform {
    pub minimum: f64,
    pub maximum: f64,
}

impl ScaleTransform {
    pub fn forward(&self, value: f64) -> f64 {
        (value - self.minimum) / (self.maximum - self.minimum)
    }

    pub fn inverse(&self, scaled: f64) -> f64 {
        self.minimum + scaled * (self.maximum - self.minimum)
    }

    pub fn forward_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.forward(v)).collect()
    }

    pub fn inverse_all(&self, values: &[f64]) -> Vec<f64> {
        values.iter().map(|&v| self.inverse(v)).collect()
    }
}

/// Fits min/max over the close prices of the first `train_fraction` of the
/// records only, so no statistic leaks from the validation period.
pub fn fit_scale(series: &PriceSeries, train_fraction: f64) -> Result<ScaleTransform, DataError> {
    if series.is_empty() {
        return Err(DataError::EmptySeries);
    }
    if !(train_fraction > 0.0 && train_fraction <= 1.0) {
        return Err(DataError::InvalidFraction(train_fraction));
    }
    let prefix = ((series.len() as f64) * train_fraction).round() as usize;
    let prefix = prefix.clamp(1, series.len());
    let closes = &series.records()[..prefix];
    let minimum = closes.iter().map(|r| r.close).fold(f64::INFINITY, f64::min);
    let maximum = closes
        .iter()
        .map(|r| r.close)
        .fold(f64::NEG_INFINITY, f64::max);
    if maximum <= minimum {
        return Err(DataError::ConstantSeries);
    }
    Ok(ScaleTransform { minimum, maximum })
}

/// One training example: a scaled input window, the target window that
/// immediately follows it, and optional stacked feature channels.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WindowPair {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
    /// Feature channels, each of the input's length. Empty until the
    /// feature extractors run.
    pub features: Vec<Vec<f64>>,
    pub origin_index: usize,
}

impl WindowPair {
    /// Channel count including the raw close-price channel.
    pub fn input_channels(&self) -> usize {
        1 + self.features.len()
    }
}

/// Chronological train/validation partition of the window list.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<WindowPair>,
    pub validation: Vec<WindowPair>,
}

/// Cuts scaled close prices into (input, target) windows at origins
/// 0, stride, 2*stride, ... Deterministic and order-preserving.
pub fn slice_windows(
    series: &PriceSeries,
    transform: &ScaleTransform,
    input_len: usize,
    target_len: usize,
    stride: usize,
) -> Result<Vec<WindowPair>, DataError> {
    assert!(input_len > 0 && target_len > 0 && stride > 0);
    let window = input_len + target_len;
    if series.len() < window {
        return Err(DataError::SeriesTooShort {
            len: series.len(),
            required: window,
        });
    }
    let scaled: Vec<f64> = series.records().iter().map(|r| transform.forward(r.close)).collect();
    let mut pairs = Vec::new();
    let mut origin = 0;
    while origin + window <= scaled.len() {
        pairs.push(WindowPair {
            input: scaled[origin..origin + input_len].to_vec(),
            target: scaled[origin + input_len..origin + window].to_vec(),
            features: Vec::new(),
            origin_index: origin,
        });
        origin += stride;
    }
    Ok(pairs)
}

/// Splits windows 9:1 (or any ratio) chronologically; the integer
/// remainder goes to validation so train gets the round-down share.
pub fn split_train_val(
    windows: Vec<WindowPair>,
    train_ratio: f64,
) -> Result<DatasetSplit, DataError> {
    if windows.len() < 2 {
        return Err(DataError::TooFewWindows(windows.len()));
    }
    if !(train_ratio > 0.0 && train_ratio < 1.0) {
        return Err(DataError::InvalidFraction(train_ratio));
    }
    let n_train = ((windows.len() as f64) * train_ratio).floor() as usize;
    let n_train = n_train.clamp(1, windows.len() - 1);
    let mut train = windows;
    let validation = train.split_off(n_train);
    Ok(DatasetSplit { train, validation })
}

/// Ratio of the default 9:1 split.
pub const DEFAULT_TRAIN_RATIO: f64 = 0.9;

impl fmt::Display for ScaleTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{}, {}] -> [0, 1]", self.minimum, self.maximum)
    }
}
