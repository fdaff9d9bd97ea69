use super::{check_input, Attribution, Baseline, Method, Result};
use crate::autodiff::Tensor;
use crate::model::{Layer, Network};

/// Below this input difference a ReLU or pooling unit falls back to its gradient.
pub const DEEPLIFT_EPS: f64 = 1e-7;

/// Units whose input difference was below [`DEEPLIFT_EPS`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DeepLiftDiagnostics {
    pub fallback_units: usize,
    pub nonlinear_units: usize,
}

impl DeepLiftDiagnostics {
    pub fn fallback_fraction(&self) -> f64 {
        if self.nonlinear_units == 0 {
            0.0
        } else {
            self.fallback_units as f64 / self.nonlinear_units as f64
        }
    }
}

/// DeepLIFT with the Rescale rule against a single reference beat.
///
/// Affine layers pass multipliers through their weights; a ReLU scales by
/// `dy / dx`; a pooling window sends its multiplier to the input position that wins
/// the forward pass, scaled by `dy / dx` at that position (exactly 1 whenever the
/// reference is constant across the window, as a zero reference is). If the winner's
/// input did not change but the window maximum did, the position with the largest
/// input change carries it instead.
pub fn deeplift(
    net: &Network,
    beat: &[f64],
    class: usize,
    baseline: &Baseline,
) -> Result<Attribution> {
    let (a, diag) = deeplift_with_diagnostics(net, beat, class, baseline)?;
    if diag.fallback_fraction() > 0.5
        && beat
            .iter()
            .zip(&baseline.single(beat.len(), "deeplift")?)
            .any(|(x, r)| x != r)
    {
        log::warn!(
            "DeepLIFT fell back to gradients on {} of {} nonlinear units",
            diag.fallback_units,
            diag.nonlinear_units
        );
    }
    Ok(a)
}

pub fn deeplift_with_diagnostics(
    net: &Network,
    beat: &[f64],
    class: usize,
    baseline: &Baseline,
) -> Result<(Attribution, DeepLiftDiagnostics)> {
    check_input(net, beat, class)?;
    let reference = baseline.single(beat.len(), "deeplift")?;
    let xs = net.activations(beat)?;
    let rs = net.activations(&reference)?;
    let x_in = Tensor::sequence(beat.to_vec());
    let r_in = Tensor::sequence(reference.clone());

    let mut diag = DeepLiftDiagnostics::default();
    let mut m = vec![0.0; net.num_classes];
    m[class] = 1.0;
    for (i, layer) in net.layers.iter().enumerate().rev() {
        let (xi, ri) = if i == 0 {
            (&x_in, &r_in)
        } else {
            (&xs[i - 1], &rs[i - 1])
        };
        let (xo, ro) = (&xs[i], &rs[i]);
        m = match layer {
            Layer::Dense { weights, .. } => {
                let nout = weights.shape()[1];
                weights
                    .data()
                    .chunks_exact(nout)
                    .map(|row| row.iter().zip(&m).map(|(w, g)| w * g).sum())
                    .collect()
            }
            Layer::Conv { kernel, .. } => {
                let (k, cin, cout) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
                let mut out = vec![0.0; xi.len()];
                let w = kernel.data();
                for (t, mo) in m.chunks_exact(cout).enumerate() {
                    for j in 0..k * cin {
                        let wrow = &w[j * cout..(j + 1) * cout];
                        out[t * cin + j] += wrow.iter().zip(mo).map(|(a, b)| a * b).sum::<f64>();
                    }
                }
                out
            }
            Layer::Relu => {
                let mut out = Vec::with_capacity(m.len());
                for j in 0..m.len() {
                    let dx = xi.data()[j] - ri.data()[j];
                    diag.nonlinear_units += 1;
                    let mult = if dx.abs() > DEEPLIFT_EPS {
                        (xo.data()[j] - ro.data()[j]) / dx
                    } else {
                        diag.fallback_units += 1;
                        if xi.data()[j] > 0.0 {
                            1.0
                        } else {
                            0.0
                        }
                    };
                    out.push(m[j] * mult);
                }
                out
            }
            Layer::MaxPool { pool } => {
                let c = xi.shape()[1];
                let mut out = vec![0.0; xi.len()];
                let xd = xi.data();
                for (o, &mo) in m.iter().enumerate() {
                    let (t, ch) = (o / c, o % c);
                    let mut best = t * pool * c + ch;
                    for p in 1..*pool {
                        let j = (t * pool + p) * c + ch;
                        if xd[j] > xd[best] {
                            best = j;
                        }
                    }
                    let dy = xo.data()[o] - ro.data()[o];
                    let mut dx = xd[best] - ri.data()[best];
                    if dx.abs() <= DEEPLIFT_EPS && dy.abs() > DEEPLIFT_EPS {
                        // The winner did not move but the window max did (for example a
                        // tie at a clamped zero). Send the change through the position
                        // that moved most; |dy| <= max |dx| keeps the factor bounded.
                        for p in 0..*pool {
                            let j = (t * pool + p) * c + ch;
                            let d = xd[j] - ri.data()[j];
                            if d.abs() > dx.abs() {
                                best = j;
                                dx = d;
                            }
                        }
                    }
                    diag.nonlinear_units += 1;
                    let factor = if dx.abs() > DEEPLIFT_EPS {
                        dy / dx
                    } else {
                        diag.fallback_units += 1;
                        1.0
                    };
                    out[best] += mo * factor;
                }
                out
            }
            Layer::Dropout { .. } | Layer::Flatten => m,
        };
    }

    let scores: Vec<f64> = m
        .iter()
        .zip(beat.iter().zip(&reference))
        .map(|(mi, (x, r))| mi * (x - r))
        .collect();
    let mut a = Attribution::new(Method::Deeplift, class, baseline, scores);
    a.score_input = xs.last().expect("network has layers").data()[class];
    a.score_baseline = rs.last().expect("network has layers").data()[class];
    Ok((a, diag))
}
