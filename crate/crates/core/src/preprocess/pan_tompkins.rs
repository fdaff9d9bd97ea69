//! Pan-Tompkins QRS detection on a band-passed ECG.

use super::{ms_to_samples, PreprocessError, Result};

const DERIVATIVE_DELAY: usize = 2;

/// Five-point derivative `(2x[n] + x[n-1] - x[n-3] - 2x[n-4]) / 8`, with the first four
/// samples computed on a reflected extension so the output keeps the input length.
pub fn five_point_derivative(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let at = |i: isize| -> f64 {
        // Reflect about index 0, excluding the edge sample itself.
        let j = i.unsigned_abs().min(n.saturating_sub(1));
        x[j]
    };
    (0..n as isize)
        .map(|i| (2.0 * at(i) + at(i - 1) - at(i - 3) - 2.0 * at(i - 4)) / 8.0)
        .collect()
}

/// Moving-window integral of the squared derivative. The window is 150 ms and causal:
/// `y[n] = mean(s[n-N+1..=n])` with samples before the start taken as zero.
pub fn pt_feature_signal(filtered: &[f64], sampling_rate_hz: u32) -> Result<Vec<f64>> {
    if let Some(i) = filtered.iter().position(|v| !v.is_finite()) {
        return Err(PreprocessError::NonFinite { index: i });
    }
    if filtered.is_empty() {
        return Ok(Vec::new());
    }
    let window = integration_window(sampling_rate_hz);
    let squared: Vec<f64> = five_point_derivative(filtered)
        .iter()
        .map(|d| d * d)
        .collect();
    let mut out = Vec::with_capacity(squared.len());
    let mut acc = 0.0;
    for i in 0..squared.len() {
        acc += squared[i];
        if i >= window {
            acc -= squared[i - window];
        }
        out.push(acc / window as f64);
    }
    // The running sum can drift slightly negative after cancellation.
    for v in out.iter_mut() {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    Ok(out)
}

fn integration_window(sampling_rate_hz: u32) -> usize {
    ms_to_samples(150.0, sampling_rate_hz).max(1)
}

/// Adaptive dual-threshold detector state and tuning.
#[derive(Debug, Clone)]
pub struct PeakDetector {
    pub sampling_rate_hz: u32,
    /// Minimum spacing between detections.
    pub refractory_ms: f64,
    /// Half-width of the window used to refine a detection on the band-passed signal.
    pub refine_ms: f64,
    /// Search back once the gap since the last beat exceeds this multiple of the RR average.
    pub searchback_factor: f64,
    /// Initial learning phase used to seed the signal and noise peak estimates.
    pub init_ms: f64,
}

impl PeakDetector {
    pub fn new(sampling_rate_hz: u32) -> Self {
        Self {
            sampling_rate_hz,
            refractory_ms: 200.0,
            refine_ms: 50.0,
            searchback_factor: 1.66,
            init_ms: 2000.0,
        }
    }

    /// Returns strictly increasing R-peak indices into `filtered`.
    pub fn detect(&self, filtered: &[f64]) -> Result<Vec<usize>> {
        let fs = self.sampling_rate_hz;
        let init = ms_to_samples(self.init_ms, fs);
        if filtered.len() < init {
            return Err(PreprocessError::SignalTooShort {
                needed: init,
                got: filtered.len(),
            });
        }
        let feature = pt_feature_signal(filtered, fs)?;
        let refractory = ms_to_samples(self.refractory_ms, fs);
        let window = integration_window(fs);
        let delay = DERIVATIVE_DELAY + (window - 1) / 2;

        let learn = &feature[..init];
        let max_learn = learn.iter().fold(0.0f64, |m, &v| m.max(v));
        if max_learn <= 0.0 && feature.iter().all(|&v| v <= 0.0) {
            return Ok(Vec::new());
        }
        let mut spki = 0.25 * max_learn;
        let mut npki = 0.5 * learn.iter().sum::<f64>() / init as f64;
        let threshold = |spki: f64, npki: f64| npki + 0.25 * (spki - npki);

        // Local maxima of the integrated signal (first index of a plateau).
        let candidates = (1..feature.len().saturating_sub(1))
            .filter(|&i| feature[i] > feature[i - 1] && feature[i] >= feature[i + 1]);

        let mut qrs: Vec<(usize, f64)> = Vec::new();
        let mut noise_since_last: Vec<(usize, f64)> = Vec::new();
        let mut rr: Vec<usize> = Vec::new();

        for i in candidates {
            let h = feature[i];
            let th1 = threshold(spki, npki);
            if h > th1 {
                if let Some(last) = qrs.last_mut() {
                    if i - last.0 < refractory {
                        // Same complex (or physiologically impossible): keep the larger.
                        if h > last.1 {
                            *last = (i, h);
                        }
                        continue;
                    }
                }
                spki = 0.125 * h + 0.875 * spki;
                accept(&mut qrs, &mut rr, (i, h));
                noise_since_last.clear();
            } else {
                npki = 0.125 * h + 0.875 * npki;
                noise_since_last.push((i, h));
            }

            // Search back for a missed beat at half threshold.
            if rr.is_empty() {
                continue;
            }
            let recent = &rr[rr.len().saturating_sub(8)..];
            let rr_avg = recent.iter().sum::<usize>() as f64 / recent.len() as f64;
            let last = qrs.last().map_or(0, |q| q.0);
            if (i - last) as f64 > self.searchback_factor * rr_avg {
                let th2 = 0.5 * threshold(spki, npki);
                let best = noise_since_last
                    .iter()
                    .filter(|(j, _)| *j >= last + refractory)
                    .copied()
                    .max_by(|a, b| a.1.total_cmp(&b.1));
                if let Some((j, hj)) = best {
                    if hj > th2 {
                        spki = 0.25 * hj + 0.75 * spki;
                        accept(&mut qrs, &mut rr, (j, hj));
                        noise_since_last.retain(|(k, _)| *k > j);
                    }
                }
            }
        }

        // Undo the derivative and integration delay, then snap to the band-passed extremum.
        let half = ms_to_samples(self.refine_ms, fs);
        let n = filtered.len();
        let mut peaks: Vec<usize> = Vec::with_capacity(qrs.len());
        for (i, _) in qrs {
            let center = i.saturating_sub(delay);
            let lo = center.saturating_sub(half);
            let hi = (center + half).min(n - 1);
            let best = (lo..=hi)
                .max_by(|&a, &b| {
                    filtered[a]
                        .abs()
                        .total_cmp(&filtered[b].abs())
                        .then(b.cmp(&a))
                })
                .unwrap_or(center);
            match peaks.last_mut() {
                Some(prev) if best < *prev + refractory => {
                    if filtered[best].abs() > filtered[*prev].abs() {
                        *prev = best;
                    }
                }
                _ => peaks.push(best),
            }
        }
        Ok(peaks)
    }
}

fn accept(qrs: &mut Vec<(usize, f64)>, rr: &mut Vec<usize>, peak: (usize, f64)) {
    if let Some(last) = qrs.last() {
        rr.push(peak.0 - last.0);
    }
    qrs.push(peak);
}

/// Pan-Tompkins R-peak detection with default tuning.
pub fn detect_r_peaks(filtered: &[f64], sampling_rate_hz: u32) -> Result<Vec<usize>> {
    PeakDetector::new(sampling_rate_hz).detect(filtered)
}
