//! Butterworth band-pass design and zero-phase second-order-section filtering.

use std::f64::consts::PI;

use num_complex::Complex64;

use super::{PreprocessError, Result};

/// One biquad, `a0` normalized to 1: `b0 + b1 z^-1 + b2 z^-2 / (1 + a1 z^-1 + a2 z^-2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Steady-state transposed-direct-form-II state for a unit step input.
    fn step_state(&self) -> [f64; 2] {
        let [b0, _, b2] = self.b;
        let [_, _, a2] = self.a;
        let h = self.b.iter().sum::<f64>() / self.a.iter().sum::<f64>();
        [h - b0, b2 - a2 * h]
    }

    fn response(&self, z_inv: Complex64) -> Complex64 {
        let num = self.b[0] + z_inv * (self.b[1] + z_inv * self.b[2]);
        let den = self.a[0] + z_inv * (self.a[1] + z_inv * self.a[2]);
        num / den
    }
}

/// A digital Butterworth band-pass as a cascade of biquads.
#[derive(Debug, Clone, PartialEq)]
pub struct BandPass {
    pub sections: Vec<Biquad>,
    pub sampling_rate_hz: f64,
}

impl BandPass {
    /// Designs an order-`order` Butterworth band-pass (2·order poles) with the bilinear
    /// transform and frequency pre-warping.
    pub fn butterworth(
        order: usize,
        low_hz: f64,
        high_hz: f64,
        sampling_rate_hz: f64,
    ) -> Result<Self> {
        let nyquist = sampling_rate_hz / 2.0;
        if order == 0 || !(0.0 < low_hz && low_hz < high_hz && high_hz < nyquist) {
            return Err(PreprocessError::InvalidParameter(format!(
                "band {low_hz}-{high_hz} Hz (order {order}) is not valid at {sampling_rate_hz} Hz"
            )));
        }
        let fs2 = 2.0 * sampling_rate_hz;
        let warp = |f: f64| fs2 * (PI * f / sampling_rate_hz).tan();
        let (w1, w2) = (warp(low_hz), warp(high_hz));
        let bw = w2 - w1;
        let w0_sq = w1 * w2;

        // Low-pass prototype poles on the unit circle, left half plane.
        let proto: Vec<Complex64> = (0..order)
            .map(|k| {
                let theta = PI * (2 * k + order + 1) as f64 / (2 * order) as f64;
                Complex64::from_polar(1.0, theta)
            })
            .collect();

        // s -> (s^2 + w0^2) / (s bw): each prototype pole yields two band-pass poles.
        let mut analog = Vec::with_capacity(2 * order);
        for p in &proto {
            let pb = p * bw;
            let disc = (pb * pb - 4.0 * w0_sq).sqrt();
            analog.push((pb + disc) / 2.0);
            analog.push((pb - disc) / 2.0);
        }
        // Gain bw^order with `order` zeros at s = 0 (the rest at infinity).
        let mut gain = Complex64::new(bw.powi(order as i32), 0.0);
        for p in &analog {
            gain /= fs2 - p;
        }
        gain *= fs2.powi(order as i32);

        let mut digital: Vec<Complex64> = analog.iter().map(|p| (fs2 + p) / (fs2 - p)).collect();
        // Pair conjugates: keep the upper-half-plane member of each pair.
        digital.retain(|p| p.im > 0.0);
        if digital.len() != order {
            return Err(PreprocessError::InvalidParameter(
                "band-pass design produced real poles; band too wide for this order".into(),
            ));
        }
        digital.sort_by(|a, b| a.norm().total_cmp(&b.norm()));

        let mut sections: Vec<Biquad> = digital
            .iter()
            .map(|p| Biquad {
                // One zero at z = 1 and one at z = -1 per section.
                b: [1.0, 0.0, -1.0],
                a: [1.0, -2.0 * p.re, p.norm_sqr()],
            })
            .collect();
        let g = gain.re;
        for c in sections[0].b.iter_mut() {
            *c *= g;
        }
        Ok(Self {
            sections,
            sampling_rate_hz,
        })
    }

    /// Complex frequency response of one forward pass at `freq_hz`.
    pub fn response(&self, freq_hz: f64) -> Complex64 {
        let w = 2.0 * PI * freq_hz / self.sampling_rate_hz;
        let z_inv = Complex64::from_polar(1.0, -w);
        self.sections.iter().map(|s| s.response(z_inv)).product()
    }

    /// Samples of odd extension added at each end before forward-backward filtering.
    pub fn pad_len(&self) -> usize {
        3 * (2 * self.sections.len() + 1)
    }

    /// Single causal pass. Each section starts in the steady state for a constant input
    /// equal to its own first input sample.
    fn filter_causal(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for s in &self.sections {
            let zi = s.step_state();
            let x0 = y.first().copied().unwrap_or(0.0);
            let mut z = [zi[0] * x0, zi[1] * x0];
            let [b0, b1, b2] = s.b;
            let [_, a1, a2] = s.a;
            for v in y.iter_mut() {
                let xin = *v;
                let out = b0 * xin + z[0];
                z[0] = b1 * xin - a1 * out + z[1];
                z[1] = b2 * xin - a2 * out;
                *v = out;
            }
        }
        y
    }

    /// Zero-phase forward-backward filtering with odd extension at both ends.
    pub fn filtfilt(&self, x: &[f64]) -> Result<Vec<f64>> {
        let pad = self.pad_len();
        if x.len() <= pad {
            return Err(PreprocessError::SignalTooShort {
                needed: pad + 1,
                got: x.len(),
            });
        }
        if let Some(i) = x.iter().position(|v| !v.is_finite()) {
            return Err(PreprocessError::NonFinite { index: i });
        }
        let n = x.len();
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
        ext.extend_from_slice(x);
        ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

        let mut y = self.filter_causal(&ext);
        y.reverse();
        let mut y = self.filter_causal(&y);
        y.reverse();
        Ok(y[pad..pad + n].to_vec())
    }
}
