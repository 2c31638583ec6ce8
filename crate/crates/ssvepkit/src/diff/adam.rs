//! Adam optimizer over externally owned parameter buffers.

use crate::{Error, Result};

/// First/second moment state plus hyperparameters. Moments are
/// allocated lazily on the first step and pinned to those lengths.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub t: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One Adam update with bias correction. `params[i]` is updated in
/// place from `grads[i]`.
pub fn adam_step(params: &mut [&mut [f64]], grads: &[&[f64]], state: &mut AdamState) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::numeric(format!(
            "adam_step got {} params but {} grads",
            params.len(),
            grads.len()
        )));
    }
    if state.t == 0 {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = params.iter().map(|p| vec![0.0; p.len()]).collect();
    } else if state.m.len() != params.len()
        || state
            .m
            .iter()
            .zip(params.iter())
            .any(|(m, p)| m.len() != p.len())
    {
        return Err(Error::numeric(
            "adam_step parameter shapes drifted between steps".to_string(),
        ));
    }
    state.t += 1;
    let bc1 = 1.0 - state.beta1.powi(state.t as i32);
    let bc2 = 1.0 - state.beta2.powi(state.t as i32);
    for (pi, param) in params.iter_mut().enumerate() {
        let g = grads[pi];
        if g.len() != param.len() {
            return Err(Error::numeric(format!(
                "adam_step grad length {} does not match param length {}",
                g.len(),
                param.len()
            )));
        }
        let m = &mut state.m[pi];
        let v = &mut state.v[pi];
        for i in 0..param.len() {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
            let mhat = m[i] / bc1;
            let vhat = v[i] / bc2;
            param[i] -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}
