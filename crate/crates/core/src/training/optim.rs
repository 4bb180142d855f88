use log::warn;

use crate::diffnet::ParameterVector;
use crate::model::checkpoint::AdamState;

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

/// One bias-corrected Adam step that *descends* the gradient held in
/// `params.grads()`, then zeroes it. Non-finite gradients skip the update
/// (moments and step count untouched). Returns whether a step was taken.
pub fn adam_step(params: &mut ParameterVector, state: &mut AdamState, config: &AdamConfig) -> bool {
    let grads = params.grads().to_vec();
    let applied = adam_update(params.values_mut(), &grads, state, config);
    params.zero_grads();
    applied
}

/// [`adam_step`] on raw slices; `grads` is left untouched.
pub fn adam_update(values: &mut [f64], grads: &[f64], state: &mut AdamState, config: &AdamConfig) -> bool {
    if state.m.len() != values.len() {
        *state = AdamState::new(values.len());
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        warn!("skipping Adam step: non-finite gradient {} at coordinate {i}", grads[i]);
        return false;
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - config.beta1.powi(t);
    let c2 = 1.0 - config.beta2.powi(t);
    for (((x, g), m), v) in values.iter_mut().zip(grads).zip(&mut state.m).zip(&mut state.v) {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        *x -= config.lr * (*m / c1) / ((*v / c2).sqrt() + config.eps);
    }
    true
}
