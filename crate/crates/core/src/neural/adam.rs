use super::{Gradients, NetworkParams};
use crate::error::{Error, Result};

/// Bias-corrected Adam moments for every trainable parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(params: &NetworkParams) -> Self {
        Self::with_constants(params, 0.9, 0.999, 1e-8)
    }

    pub fn with_constants(params: &NetworkParams, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params
            .parameters()
            .iter()
            .map(|p| vec![0.0; p.len()])
            .collect();
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

/// One Adam update of `params` in place.
pub fn adam_step(
    params: &mut NetworkParams,
    grads: &Gradients,
    state: &mut AdamState,
    learning_rate: f64,
) -> Result<()> {
    let shapes: Vec<usize> = params.parameters().iter().map(|p| p.len()).collect();
    let grad_shapes: Vec<usize> = grads.params.iter().map(Vec::len).collect();
    let state_shapes: Vec<usize> = state.first.iter().map(Vec::len).collect();
    if shapes != grad_shapes {
        return Err(Error::dims(shapes, grad_shapes));
    }
    if shapes != state_shapes {
        return Err(Error::dims(shapes, state_shapes));
    }
    state.step += 1;
    let (b1, b2, eps) = (state.beta1, state.beta2, state.eps);
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (((p, g), m), v) in params
        .parameters_mut()
        .into_iter()
        .zip(&grads.params)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        for i in 0..p.len() {
            m[i] = b1 * m[i] + (1.0 - b1) * g[i];
            v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            p[i] -= learning_rate * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Exponential per-epoch decay `base * decay^epoch`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LearningRateSchedule {
    pub base: f64,
    pub decay: f64,
}

impl LearningRateSchedule {
    pub fn at(&self, epoch: usize) -> f64 {
        self.base * self.decay.powi(epoch as i32)
    }
}

impl Default for LearningRateSchedule {
    fn default() -> Self {
        Self {
            base: 1e-4,
            decay: 0.87,
        }
    }
}

/// Default schedule: `1e-4 * 0.87^epoch`.
pub fn lr_schedule(epoch: usize) -> f64 {
    LearningRateSchedule::default().at(epoch)
}
