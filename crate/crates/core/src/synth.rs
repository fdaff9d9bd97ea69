//! Synthetic ECG with known beat positions and labels.
//!
//! Each beat is a sum of Gaussian waves placed relative to its R-peak, with a
//! class-specific morphology and rhythm. Good enough to exercise the pipeline end
//! to end; not a physiological model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::Tensor;
use crate::model::{Layer, Network};
use crate::signal_io::{AnnotationEntry, Channel, EcgRecord};

/// One Gaussian wave: offset from the R-peak (s), amplitude (mV), width (s).
type Wave = (f64, f64, f64);

const P: Wave = (-0.2, 0.15, 0.025);
const NORMAL_QRS: [Wave; 3] = [
    (-0.025, -0.1, 0.008),
    (0.0, 1.0, 0.01),
    (0.025, -0.25, 0.008),
];

/// Waves and RR scale (relative to the running rhythm) for a beat class.
fn morphology(symbol: char) -> (Vec<Wave>, f64) {
    match symbol {
        'A' => {
            let mut w = vec![(-0.12, -0.1, 0.02)];
            w.extend(NORMAL_QRS);
            w.push((0.25, 0.3, 0.04));
            (w, 0.65)
        }
        'V' => (
            vec![(0.0, 1.2, 0.03), (0.06, -0.6, 0.03), (0.3, -0.4, 0.05)],
            0.7,
        ),
        'L' => (
            vec![P, (0.0, 0.8, 0.025), (0.04, 0.7, 0.02), (0.3, -0.3, 0.05)],
            1.0,
        ),
        'R' => (
            vec![
                P,
                (0.0, 0.7, 0.01),
                (0.03, -0.4, 0.012),
                (0.06, 0.5, 0.015),
                (0.3, 0.25, 0.04),
            ],
            1.0,
        ),
        '/' => (
            vec![(-0.04, 2.0, 0.002), (0.0, 0.9, 0.03), (0.3, -0.35, 0.05)],
            1.0,
        ),
        _ => {
            let mut w = vec![P];
            w.extend(NORMAL_QRS);
            w.push((0.25, 0.3, 0.04));
            (w, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub sampling_rate_hz: u32,
    pub duration_s: f64,
    /// Beat classes drawn uniformly at random for each beat.
    pub classes: Vec<char>,
    pub mean_rr_s: f64,
    pub noise_mv: f64,
    pub wander_mv: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            sampling_rate_hz: 360,
            duration_s: 60.0,
            classes: vec!['N', 'V'],
            mean_rr_s: 0.8,
            noise_mv: 0.02,
            wander_mv: 0.1,
            seed: 0,
        }
    }
}

/// A synthetic single-lead record with one beat annotation per generated beat.
/// Samples are quantized to 12-bit ADC units (gain 200/mV) so the record
/// round-trips through format 212 exactly.
pub fn synth_record(record_id: &str, config: &SynthConfig) -> (EcgRecord, Vec<AnnotationEntry>) {
    let fs = f64::from(config.sampling_rate_hz);
    let n = (config.duration_s * fs).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let classes = if config.classes.is_empty() {
        vec!['N']
    } else {
        config.classes.clone()
    };

    let mut signal = vec![0.0; n];
    let mut annotations = Vec::new();
    let mut t = 0.5;
    let margin = 0.5;
    let mut symbol = classes[rng.random_range(0..classes.len())];
    while t < config.duration_s - margin {
        let (waves, _) = morphology(symbol);
        let r = (t * fs).round() as usize;
        for &(offset, amp, width) in &waves {
            let centre = t + offset;
            let lo = ((centre - 5.0 * width) * fs).floor().max(0.0) as usize;
            let hi = (((centre + 5.0 * width) * fs).ceil() as usize).min(n);
            for (i, v) in signal.iter_mut().enumerate().take(hi).skip(lo) {
                let d = i as f64 / fs - centre;
                *v += amp * (-(d * d) / (2.0 * width * width)).exp();
            }
        }
        annotations.push(AnnotationEntry::new(r, symbol));
        // Premature beats shorten the interval before them.
        symbol = classes[rng.random_range(0..classes.len())];
        t += config.mean_rr_s * morphology(symbol).1 * rng.random_range(0.95..1.05);
    }

    let noise = Normal::new(0.0, config.noise_mv.max(0.0)).expect("finite std");
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    for (i, v) in signal.iter_mut().enumerate() {
        let s = i as f64 / fs;
        *v += config.wander_mv * (std::f64::consts::TAU * 0.3 * s + phase).sin()
            + noise.sample(&mut rng);
    }

    let gain = 200.0;
    let adc: Vec<i16> = signal
        .iter()
        .map(|v| (v * gain).round().clamp(-2048.0, 2047.0) as i16)
        .collect();
    let record = EcgRecord::new(
        record_id,
        config.sampling_rate_hz,
        vec![Channel::from_adc("MLII", gain, 0, adc)],
    )
    .expect("consistent channels");
    (record, annotations)
}

/// Unit-height Gaussian pulses centred on `centers`, `sigma` in samples.
pub fn pulse_train(centers: &[usize], len: usize, sigma: f64) -> Vec<f64> {
    let mut x = vec![0.0; len];
    for &c in centers {
        let reach = (6.0 * sigma).ceil() as usize;
        for (i, v) in x
            .iter_mut()
            .enumerate()
            .take((c + reach + 1).min(len))
            .skip(c.saturating_sub(reach))
        {
            let d = i as f64 - c as f64;
            *v += (-(d * d) / (2.0 * sigma * sigma)).exp();
        }
    }
    x
}

/// Conv(3 taps, 3 channels) → ReLU → MaxPool(2) → Dense(5) → ReLU → Dense(`classes`)
/// over `len` inputs, all weights and biases uniform in [-0.8, 0.8). `len - 2` must be even.
pub fn small_network(len: usize, classes: usize, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = |shape: Vec<usize>| {
        let n = shape.iter().product();
        Tensor::new(shape, (0..n).map(|_| rng.random_range(-0.8..0.8)).collect())
            .expect("shape matches data")
    };
    let pooled = (len - 2) / 2;
    let layers = vec![
        Layer::Conv {
            kernel: t(vec![3, 1, 3]),
            bias: t(vec![3]),
        },
        Layer::Relu,
        Layer::MaxPool { pool: 2 },
        Layer::Flatten,
        Layer::Dense {
            weights: t(vec![pooled * 3, 5]),
            bias: t(vec![5]),
        },
        Layer::Relu,
        Layer::Dense {
            weights: t(vec![5, classes]),
            bias: t(vec![classes]),
        },
    ];
    Network::from_layers(layers, len).expect("layer shapes agree")
}
