use super::config::TrainConfig;
use crate::fusion::params::{ALPHA, BETA};
use crate::fusion::ParameterSet;
use crate::{Error, Result};

/// Smallest gate sharpness the optimiser leaves in place.
pub const ALPHA_FLOOR: f64 = 1e-3;

/// First and second moment estimates, one buffer per parameter tensor.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected ADAM update from the gradients stored on `params`.
/// Tensors without a gradient are treated as having a zero gradient.
///
/// Afterwards `alpha` is clamped to at least [`ALPHA_FLOOR`] and `beta` is
/// projected onto `[0, layers]`.
pub fn adam_step(params: &mut ParameterSet, state: &mut AdamState, config: &TrainConfig, layers: usize) -> Result<()> {
    for (name, t) in params.iter() {
        if let Some(g) = t.grad() {
            if let Some(i) = g.iter().position(|x| !x.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of `{name}` at element {i}")));
            }
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, (_, t))| m.len() != t.numel()) {
        return Err(Error::dim("optimiser state does not match the parameter set"));
    }

    state.step += 1;
    let b1 = config.adam_beta1;
    let c1 = 1.0 - b1.powi(state.step as i32);
    for ((name, t), (m, v)) in params.iter_mut().zip(state.m.iter_mut().zip(state.v.iter_mut())) {
        let is_gate = name == ALPHA || name == BETA;
        if config.freeze_layers && !is_gate {
            continue;
        }
        let (lr, b2) = if is_gate {
            (config.gate_learning_rate, config.gate_adam_beta2)
        } else {
            (config.learning_rate, config.adam_beta2)
        };
        let c2 = 1.0 - b2.powi(state.step as i32);
        let eps = config.adam_eps;
        let (data, grad) = t.data_and_grad_mut();
        match grad {
            Some(g) => {
                for (((x, m), v), &g) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()).zip(g) {
                    *m = b1 * *m + (1.0 - b1) * g;
                    *v = b2 * *v + (1.0 - b2) * g * g;
                    *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
            // Zero gradient: the moments decay and the update follows them.
            None if m.iter().any(|&x| x != 0.0) => {
                for ((x, m), v) in data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *m *= b1;
                    *v *= b2;
                    *x -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
                }
            }
            None => {}
        }
    }
    if let Some(a) = params.get_mut(ALPHA) {
        let x = a.data_mut();
        x[0] = x[0].max(ALPHA_FLOOR);
    }
    if let Some(b) = params.get_mut(BETA) {
        let x = b.data_mut();
        x[0] = x[0].clamp(0.0, layers as f64);
    }
    Ok(())
}
