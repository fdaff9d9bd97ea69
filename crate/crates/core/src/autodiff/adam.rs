use super::{AutodiffError, Result, Tensor};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &[&Tensor]) -> Self {
        Self {
            m: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            v: params.iter().map(|p| vec![0.0; p.len()]).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. A non-finite gradient anywhere aborts the whole
/// step before any parameter or moment is touched.
pub fn adam_step(
    params: &mut [&mut Tensor],
    grads: &[&Tensor],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(AutodiffError::Shape(format!(
            "{} parameters, {} gradients, {} moment buffers",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    for (i, (p, g)) in params.iter().zip(grads).enumerate() {
        if p.shape() != g.shape() || state.m[i].len() != p.len() {
            return Err(AutodiffError::Shape(format!(
                "parameter {i}: shape {:?} vs gradient {:?}",
                p.shape(),
                g.shape()
            )));
        }
        if let Some(j) = g.data().iter().position(|v| !v.is_finite()) {
            return Err(AutodiffError::NonFiniteGradient { param: i, index: j });
        }
    }

    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, (w, &gj)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
            m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * gj;
            v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * gj * gj;
            let m_hat = m[j] / c1;
            let v_hat = v[j] / c2;
            *w -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
