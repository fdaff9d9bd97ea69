use serde::{Deserialize, Serialize};

use super::{ms_to_samples, PreprocessConfig, PreprocessError, Result};
use crate::signal_io::{BeatAnnotation, EcgRecord};

/// One band-passed beat window centered (200 ms / 400 ms) on an R-peak.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BeatSegment {
    pub samples: Vec<f64>,
    pub label: char,
    pub source_record: String,
    pub r_peak_index: usize,
}

/// Result of segmenting one record.
#[derive(Debug, Clone, Default)]
pub struct Segmentation {
    pub segments: Vec<BeatSegment>,
    /// Beats dropped because their window crossed a record boundary.
    pub skipped: usize,
}

/// Cuts `[r - round(0.2 fs), r + round(0.4 fs))` around each index; windows that do not
/// fit inside the signal are skipped and counted.
pub fn segment_beats(
    filtered: &[f64],
    indices: &[usize],
    labels: &[char],
    sampling_rate_hz: u32,
    source_record: &str,
) -> Segmentation {
    segment_with(
        filtered,
        indices,
        labels,
        sampling_rate_hz,
        source_record,
        &PreprocessConfig::default(),
    )
}

fn segment_with(
    filtered: &[f64],
    indices: &[usize],
    labels: &[char],
    sampling_rate_hz: u32,
    source_record: &str,
    config: &PreprocessConfig,
) -> Segmentation {
    let pre = ms_to_samples(config.pre_ms, sampling_rate_hz);
    let post = ms_to_samples(config.post_ms, sampling_rate_hz);
    let mut out = Segmentation::default();
    for (&r, &label) in indices.iter().zip(labels) {
        if r < pre || r + post > filtered.len() {
            out.skipped += 1;
            continue;
        }
        let window = &filtered[r - pre..r + post];
        let samples = if window.len() == config.beat_len {
            window.to_vec()
        } else {
            resample_linear(window, config.beat_len)
        };
        out.segments.push(BeatSegment {
            samples,
            label,
            source_record: source_record.to_string(),
            r_peak_index: r,
        });
    }
    out
}

/// Linear interpolation onto `target_len` evenly spaced points spanning the same
/// interval, so the first and last samples are preserved.
pub fn resample_linear(samples: &[f64], target_len: usize) -> Vec<f64> {
    match (samples.len(), target_len) {
        (_, 0) => Vec::new(),
        (0, _) => vec![0.0; target_len],
        (1, _) => vec![samples[0]; target_len],
        (_, 1) => vec![samples[0]],
        (n, m) => {
            let step = (n - 1) as f64 / (m - 1) as f64;
            (0..m)
                .map(|j| {
                    if j == m - 1 {
                        return samples[n - 1];
                    }
                    let pos = j as f64 * step;
                    let i = pos.floor() as usize;
                    let frac = pos - i as f64;
                    if i + 1 >= n {
                        samples[n - 1]
                    } else {
                        samples[i] * (1.0 - frac) + samples[i + 1] * frac
                    }
                })
                .collect()
        }
    }
}

/// Band-passes the configured lead and cuts one segment per annotated beat.
pub fn process_record(
    record: &EcgRecord,
    annotations: &[BeatAnnotation],
    config: &PreprocessConfig,
) -> Result<Segmentation> {
    let channel = record.channels.get(config.lead).ok_or_else(|| {
        PreprocessError::InvalidParameter(format!(
            "record {} has {} channels, lead {} requested",
            record.record_id,
            record.channels.len(),
            config.lead
        ))
    })?;
    let filtered = config
        .bandpass(record.sampling_rate_hz)?
        .filtfilt(&channel.samples)?;
    let indices: Vec<usize> = annotations.iter().map(|a| a.sample_index).collect();
    let labels: Vec<char> = annotations.iter().map(|a| a.symbol).collect();
    Ok(segment_with(
        &filtered,
        &indices,
        &labels,
        record.sampling_rate_hz,
        &record.record_id,
        config,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_bounds_at_360() {
        let x: Vec<f64> = (0..20_000).map(|i| i as f64).collect();
        let s = segment_beats(&x, &[10_000], &['N'], 360, "r");
        assert_eq!(s.segments.len(), 1);
        let seg = &s.segments[0];
        assert_eq!(seg.samples.len(), 216);
        assert_eq!(seg.samples[0], 9928.0);
        assert_eq!(*seg.samples.last().unwrap(), 10_143.0);
    }

    #[test]
    fn boundary_beats_are_skipped() {
        let x = vec![0.0; 10_144];
        let s = segment_beats(&x, &[50, 10_000, 10_001], &['N', 'V', 'N'], 360, "r");
        assert_eq!(s.skipped, 2);
        assert_eq!(s.segments.len(), 1);
        assert_eq!(s.segments[0].r_peak_index, 10_000);
        assert_eq!(s.segments[0].label, 'V');
    }

    #[test]
    fn resample_ramp() {
        // Ramp 0..499 onto 216 points: value j * 499/215 at point j.
        let x: Vec<f64> = (0..500).map(|i| i as f64).collect();
        let y = resample_linear(&x, 216);
        assert_eq!(y.len(), 216);
        assert_eq!(y[0], 0.0);
        assert_eq!(y[215], 499.0);
        for (j, v) in y.iter().enumerate() {
            assert!((v - j as f64 * 499.0 / 215.0).abs() < 1e-9);
        }
        // Hand-checked interior point: 1 * 499/215 = 2.3209..., between samples 2 and 3.
        assert!((y[1] - 2.320_930_232_558_139_6).abs() < 1e-12);
    }

    #[test]
    fn other_sampling_rates_are_resampled_to_216() {
        let x = vec![1.0; 5000];
        let s = segment_beats(&x, &[1000], &['N'], 500, "r");
        // 100 + 200 samples at 500 Hz, resampled.
        assert_eq!(s.segments[0].samples.len(), 216);
    }
}
