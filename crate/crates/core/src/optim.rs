//! Adam with bias correction, and a step-decay learning-rate schedule.

use crate::error::{Error, Result};
use crate::param::ParamStore;

/// Per-parameter moment estimates and hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub learning_rate: f64,
}

impl AdamState {
    /// Zero moments sized for every parameter in `store`.
    pub fn new(store: &ParamStore, learning_rate: f64) -> Self {
        let zeros: Vec<Vec<f64>> = store.iter().map(|(_, p)| vec![0.0; p.tensor.numel()]).collect();
        AdamState {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            learning_rate,
        }
    }
}

/// Applies one bias-corrected Adam update to every parameter. Gradients are
/// left in place; the caller clears them.
pub fn adam_step(params: &mut ParamStore, state: &mut AdamState) -> Result<()> {
    if state.first_moment.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer state tracks {} parameters, store holds {}",
            state.first_moment.len(),
            params.len()
        )));
    }
    if let Some((id, _)) = params.iter().find(|(_, p)| p.tensor.grad().is_none()) {
        return Err(Error::Contract(format!(
            "parameter {} has no gradient",
            params.name(id)
        )));
    }

    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    let lr = state.learning_rate;
    let eps = state.eps;

    for ((param, m), v) in params
        .iter_mut()
        .zip(&mut state.first_moment)
        .zip(&mut state.second_moment)
    {
        let grad = param.tensor.grad().expect("checked above").to_vec();
        let values = param.tensor.values_mut();
        for i in 0..values.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (1.0 - b1) * g;
            v[i] = b2 * v[i] + (1.0 - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Multiplies the learning rate by `factor` after every `every` epochs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepDecay {
    pub initial: f64,
    pub factor: f64,
    pub every: usize,
}

impl StepDecay {
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let drops = epoch.checked_div(self.every).unwrap_or(0);
        self.initial * self.factor.powi(drops as i32)
    }
}

impl Default for StepDecay {
    fn default() -> Self {
        StepDecay {
            initial: 1e-4,
            factor: 0.5,
            every: 20,
        }
    }
}
