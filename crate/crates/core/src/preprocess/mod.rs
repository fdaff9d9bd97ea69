//! Band-pass filtering, Pan-Tompkins R-peak detection, beat segmentation and
//! dataset assembly.

mod dataset;
mod filter;
mod pan_tompkins;
mod segment;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use dataset::{
    build_dataset, read_dataset, stratified_subset, write_dataset, ClassIndex, DatasetManifest,
    DatasetSplit,
};
pub use filter::{BandPass, Biquad};
pub use pan_tompkins::{detect_r_peaks, five_point_derivative, pt_feature_signal, PeakDetector};
pub use segment::{process_record, resample_linear, segment_beats, BeatSegment, Segmentation};

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("signal too short: need at least {needed} samples, got {got}")]
    SignalTooShort { needed: usize, got: usize },
    #[error("non-finite sample at index {index}")]
    NonFinite { index: usize },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("no segments to build a dataset from")]
    EmptyInput,
    #[error("no class has at least {min_count} samples (counts: {counts})")]
    NoClassSurvives { min_count: usize, counts: String },
    #[error("dataset file: {0}")]
    DatasetFile(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, PreprocessError>;

/// Everything that determines how a record turns into model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreprocessConfig {
    /// Channel fed to the model (0 = MLII for most MIT-BIH records).
    pub lead: usize,
    pub band_low_hz: f64,
    pub band_high_hz: f64,
    pub filter_order: usize,
    pub pre_ms: f64,
    pub post_ms: f64,
    pub beat_len: usize,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            lead: 0,
            band_low_hz: 5.0,
            band_high_hz: 15.0,
            filter_order: 2,
            pre_ms: 200.0,
            post_ms: 400.0,
            beat_len: crate::BEAT_LEN,
        }
    }
}

impl PreprocessConfig {
    /// SHA-256 of the canonical JSON form, hex-encoded. Stored in datasets and
    /// checkpoints to detect preprocessing drift at inference time.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json)
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn bandpass(&self, sampling_rate_hz: u32) -> Result<BandPass> {
        if sampling_rate_hz < 100 {
            return Err(PreprocessError::InvalidParameter(format!(
                "sampling rate {sampling_rate_hz} Hz is below the 100 Hz minimum"
            )));
        }
        BandPass::butterworth(
            self.filter_order,
            self.band_low_hz,
            self.band_high_hz,
            f64::from(sampling_rate_hz),
        )
    }
}

/// Zero-phase 5-15 Hz band-pass (second-order Butterworth, applied forward and backward).
pub fn bandpass_filter(signal: &[f64], sampling_rate_hz: u32) -> Result<Vec<f64>> {
    PreprocessConfig::default()
        .bandpass(sampling_rate_hz)?
        .filtfilt(signal)
}

pub(crate) fn ms_to_samples(ms: f64, sampling_rate_hz: u32) -> usize {
    (ms * f64::from(sampling_rate_hz) / 1000.0).round() as usize
}
