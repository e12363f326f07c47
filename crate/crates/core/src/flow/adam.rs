//! Adam with bias correction; masked kernels are re-projected after each step.

use super::params::ParamStore;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            t: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdamOutcome {
    Applied,
    /// Some gradient entry was NaN or infinite; nothing changed.
    SkippedNonFinite,
}

pub fn adam_step(params: &mut ParamStore, grads: &[f64], state: &mut AdamState, lr: f64) -> AdamOutcome {
    assert_eq!(grads.len(), params.len(), "gradient length mismatch");
    assert_eq!(state.m.len(), params.len(), "optimizer state length mismatch");
    if grads.iter().any(|g| !g.is_finite()) {
        return AdamOutcome::SkippedNonFinite;
    }
    state.t += 1;
    let c1 = 1.0 - BETA1.powi(state.t as i32);
    let c2 = 1.0 - BETA2.powi(state.t as i32);
    let data = params.data_mut();
    for i in 0..data.len() {
        let g = grads[i];
        state.m[i] = BETA1 * state.m[i] + (1.0 - BETA1) * g;
        state.v[i] = BETA2 * state.v[i] + (1.0 - BETA2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        data[i] -= lr * mh / (vh.sqrt() + EPSILON);
    }
    params.project_masks();
    AdamOutcome::Applied
}
