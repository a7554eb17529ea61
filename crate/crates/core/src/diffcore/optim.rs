use std::f64::consts::PI;

use super::{Gradients, Matrix, ParamStore};
use crate::error::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.01;

/// Momentum buffers and schedule position for [`sgd_step`].
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub momentum_buffers: Vec<Matrix>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub epoch: usize,
    pub total_epochs: usize,
}

impl OptimizerState {
    pub fn new(params: &ParamStore, total_epochs: usize) -> Self {
        Self {
            momentum_buffers: (0..params.len())
                .map(|i| {
                    let (r, c) = params.value(i).shape();
                    Matrix::zeros(r, c)
                })
                .collect(),
            momentum: DEFAULT_MOMENTUM,
            weight_decay: DEFAULT_WEIGHT_DECAY,
            epoch: 0,
            total_epochs,
        }
    }
}

/// One SGD step with classical momentum and L2 decay folded into the gradient:
/// `buf ← μ·buf + (g + λ·p)`, `p ← p − lr·buf`.
///
/// Parameters registered without decay (biases, normalization gains) skip the
/// `λ·p` term. Frozen parameters are left untouched.
pub fn sgd_step(params: &mut ParamStore, grads: &Gradients, state: &mut OptimizerState, lr: f64) -> Result<()> {
    if lr <= 0.0 || !lr.is_finite() {
        return Err(Error::InvalidArgument(format!("learning rate must be positive, got {lr}")));
    }
    if grads.len() != params.len() || state.momentum_buffers.len() != params.len() {
        return Err(Error::shape(
            "sgd_step",
            format!(
                "{} parameters, {} gradients, {} momentum buffers",
                params.len(),
                grads.len(),
                state.momentum_buffers.len()
            ),
        ));
    }
    for i in 0..params.len() {
        let g = grads.at(i);
        if g.shape() != params.value(i).shape() || state.momentum_buffers[i].shape() != g.shape() {
            return Err(Error::shape("sgd_step", format!("parameter {}", params.name(i))));
        }
    }
    for i in 0..params.len() {
        if params.is_frozen(i) {
            continue;
        }
        let decay = if params.decays(i) { state.weight_decay } else { 0.0 };
        let g = grads.at(i).as_slice();
        let buf = state.momentum_buffers[i].as_mut_slice();
        let p = params.value_mut(i).as_mut_slice();
        for k in 0..p.len() {
            buf[k] = state.momentum * buf[k] + g[k] + decay * p[k];
            p[k] -= lr * buf[k];
        }
    }
    Ok(())
}

/// Cosine-annealed learning rate from `lr_max` at epoch 0 to `lr_min` at `total_epochs`.
pub fn cosine_lr(epoch: usize, total_epochs: usize, lr_max: f64, lr_min: f64) -> Result<f64> {
    if epoch > total_epochs {
        return Err(Error::InvalidArgument(format!("epoch {epoch} beyond schedule of {total_epochs}")));
    }
    if !(lr_max >= lr_min && lr_min > 0.0) {
        return Err(Error::InvalidArgument(format!("need lr_max >= lr_min > 0, got {lr_max}, {lr_min}")));
    }
    if total_epochs == 0 {
        return Ok(lr_max);
    }
    if epoch == total_epochs {
        return Ok(lr_min);
    }
    let t = epoch as f64 / total_epochs as f64;
    Ok(lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (PI * t).cos()))
}
