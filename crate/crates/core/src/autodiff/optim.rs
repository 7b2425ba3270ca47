//! Adam with bias correction.

use super::{AutodiffError, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, betas: (0.9, 0.999), eps: 1e-8 }
    }
}

/// First/second moment buffers for every parameter plus the step count.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, param: usize) -> Option<&[f64]> {
        self.first.get(param).map(Vec::as_slice)
    }

    pub fn second_moment(&self, param: usize) -> Option<&[f64]> {
        self.second.get(param).map(Vec::as_slice)
    }
}

/// One Adam update over `params`, which must be passed in the same order
/// every step. Every parameter needs a populated grad slot.
pub fn adam_step(params: &mut [&mut Tensor], config: &AdamConfig, state: &mut AdamState) -> Result<(), AutodiffError> {
    if let Some(index) = params.iter().position(|p| p.grad().is_none()) {
        return Err(AutodiffError::MissingGrad { index });
    }
    if state.first.is_empty() {
        state.first = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        state.second = state.first.clone();
    } else if state.first.len() != params.len() || state.first.iter().zip(params.iter()).any(|(m, p)| m.len() != p.numel()) {
        return Err(AutodiffError::OptimizerLayout);
    }

    state.step += 1;
    let (b1, b2) = config.betas;
    let t = state.step as i32;
    let correction1 = 1.0 - b1.powi(t);
    let correction2 = 1.0 - b2.powi(t);

    for ((param, m), v) in params.iter_mut().zip(&mut state.first).zip(&mut state.second) {
        let grad = param.grad().map(<[f64]>::to_vec).unwrap_or_default();
        for (((w, g), m), v) in param.data_mut().iter_mut().zip(&grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *w -= config.lr * m_hat / (v_hat.sqrt() + config.eps);
        }
    }
    Ok(())
}
