//! Reading ECG records and labeled beats.
//!
//! Supports the subset of the WFDB conventions used by the MIT-BIH Arrhythmia
//! Database: a text header, one or more signals in format 212, and MIT-format
//! binary annotation files. A CSV hook ingests externally prepared beats.

mod annotation;
mod csv_beats;
mod wfdb;

use std::path::PathBuf;

use thiserror::Error;

pub use annotation::{
    decode_annotations, encode_annotations, read_wfdb_annotations, symbol_for_code,
    write_wfdb_annotations, AnnotationEntry, BeatAnnotation, BEAT_SYMBOLS,
};
pub use csv_beats::{read_csv_beats, read_label_map, CsvBeat, LabelMap};
pub use wfdb::{
    decode_format212, encode_format212, parse_header, read_wfdb_record, write_wfdb_record,
    SignalSpec, WfdbHeader,
};

#[derive(Debug, Error)]
pub enum SignalIoError {
    #[error("file not found: {0}")]
    MissingFile(PathBuf),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("header {path}, line {line}: {msg}")]
    Header {
        path: PathBuf,
        line: usize,
        msg: String,
    },
    #[error("signal {signal}: unsupported WFDB format {format} (only format 212 is supported)")]
    UnsupportedFormat { signal: usize, format: String },
    #[error("signal file {path} is truncated or inconsistent: expected {expected} bytes, found {actual}")]
    Truncated {
        path: PathBuf,
        expected: u64,
        actual: u64,
    },
    #[error("malformed annotation stream at byte {offset}: {msg}")]
    MalformedAnnotation { offset: usize, msg: String },
    #[error("annotation at sample {index} lies beyond the record length {len}")]
    AnnotationOutOfRange { index: usize, len: usize },
    #[error("csv row {row}: expected {expected} sample columns, found {found}")]
    RaggedRow {
        row: usize,
        expected: usize,
        found: usize,
    },
    #[error("csv row {row}, column {column}: '{value}' is not a number")]
    NonNumeric {
        row: usize,
        column: usize,
        value: String,
    },
    #[error("csv row {row}: unknown label '{label}'")]
    UnknownLabel { row: usize, label: String },
    #[error("csv: {0}")]
    Csv(String),
    #[error("invalid record: {0}")]
    InvalidRecord(String),
}

pub type Result<T> = std::result::Result<T, SignalIoError>;

pub(crate) fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> SignalIoError {
    let path = path.into();
    move |source| {
        if source.kind() == std::io::ErrorKind::NotFound {
            SignalIoError::MissingFile(path)
        } else {
            SignalIoError::Io { path, source }
        }
    }
}

/// One lead of a record, kept both as raw ADC units and as millivolts.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub lead: String,
    /// ADC units per millivolt.
    pub gain: f64,
    /// ADC value corresponding to 0 mV.
    pub baseline: i32,
    pub adc: Vec<i16>,
    pub samples: Vec<f64>,
}

impl Channel {
    /// Builds a channel from raw ADC values, converting with `(adc - baseline) / gain`.
    pub fn from_adc(lead: impl Into<String>, gain: f64, baseline: i32, adc: Vec<i16>) -> Self {
        let samples = adc
            .iter()
            .map(|&v| (f64::from(v) - f64::from(baseline)) / gain)
            .collect();
        Self {
            lead: lead.into(),
            gain,
            baseline,
            adc,
            samples,
        }
    }
}

/// A multi-lead ECG recording.
#[derive(Debug, Clone, PartialEq)]
pub struct EcgRecord {
    pub record_id: String,
    pub sampling_rate_hz: u32,
    pub channels: Vec<Channel>,
}

impl EcgRecord {
    pub fn new(
        record_id: impl Into<String>,
        sampling_rate_hz: u32,
        channels: Vec<Channel>,
    ) -> Result<Self> {
        if sampling_rate_hz == 0 {
            return Err(SignalIoError::InvalidRecord(
                "sampling rate must be positive".into(),
            ));
        }
        if let Some(first) = channels.first() {
            if let Some(bad) = channels
                .iter()
                .find(|c| c.samples.len() != first.samples.len())
            {
                return Err(SignalIoError::InvalidRecord(format!(
                    "channel '{}' has {} samples, channel '{}' has {}",
                    bad.lead,
                    bad.samples.len(),
                    first.lead,
                    first.samples.len()
                )));
            }
        }
        Ok(Self {
            record_id: record_id.into(),
            sampling_rate_hz,
            channels,
        })
    }

    /// Number of samples per channel.
    pub fn len(&self) -> usize {
        self.channels.first().map_or(0, |c| c.samples.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
