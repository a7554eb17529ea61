//! Dense matrix math, reverse-mode gradients, and the momentum SGD optimizer.

mod gradcheck;
mod matrix;
mod optim;
mod params;
pub mod rng;
mod tape;

pub use gradcheck::{finite_diff_grad, gradient_of, gradient_with, max_relative_error, Gradients};
pub use matrix::Matrix;
pub use optim::{cosine_lr, sgd_step, OptimizerState, DEFAULT_MOMENTUM, DEFAULT_WEIGHT_DECAY};
pub use params::{ParamStore, ParamVars};
pub(crate) use tape::chamfer_forward;
pub use tape::{Adjoints, Tape, Var};

use rand::Rng;

use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// Row-wise softmax with max-shift.
pub fn softmax_rows(x: &Matrix) -> Matrix {
    let mut out = x.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Normalized rows `(x − μ)/√(σ² + eps)` and the per-row `1/√(σ² + eps)`.
pub(crate) fn layer_norm_parts(x: &Matrix, eps: f64) -> (Matrix, Vec<f64>) {
    let mut xhat = x.clone();
    let n = x.cols() as f64;
    let mut inv_std = Vec::with_capacity(x.rows());
    for r in 0..x.rows() {
        let row = xhat.row_mut(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + eps).sqrt();
        row.iter_mut().for_each(|v| *v = (*v - mean) * inv);
        inv_std.push(inv);
    }
    (xhat, inv_std)
}

/// Layer normalization over each row, then `gain ⊙ x̂ + bias`.
pub fn layer_norm(x: &Matrix, gain: &[f64], bias: &[f64], eps: f64) -> Result<Matrix> {
    if gain.len() != x.cols() || bias.len() != x.cols() {
        return Err(Error::shape(
            "layer_norm",
            format!("gain/bias lengths {}/{} for {} columns", gain.len(), bias.len(), x.cols()),
        ));
    }
    if eps <= 0.0 {
        return Err(Error::InvalidArgument(format!("layer_norm eps must be positive, got {eps}")));
    }
    let (mut out, _) = layer_norm_parts(x, eps);
    for r in 0..out.rows() {
        for ((v, g), b) in out.row_mut(r).iter_mut().zip(gain).zip(bias) {
            *v = *v * g + b;
        }
    }
    Ok(out)
}

/// Inverted-dropout keep mask: entries are `0` or `1/(1−rate)`.
///
/// The mask is a pure function of `(rows, cols, rate, seed)`.
pub fn dropout_mask(rows: usize, cols: usize, rate: f64, seed: u64) -> Matrix {
    if rate == 0.0 {
        return Matrix::filled(rows, cols, 1.0);
    }
    let keep = 1.0 / (1.0 - rate);
    let mut rng = rng::stream(seed);
    Matrix::from_fn(rows, cols, |_, _| if rng.random::<f64>() < rate { 0.0 } else { keep })
}

/// Applies dropout. In inference mode this is the identity with an all-ones mask.
pub fn dropout(x: &Matrix, rate: f64, seed: u64, training: bool) -> Result<(Matrix, Matrix)> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if !training {
        return Ok((x.clone(), Matrix::filled(x.rows(), x.cols(), 1.0)));
    }
    let mask = dropout_mask(x.rows(), x.cols(), rate, seed);
    Ok((x.hadamard(&mask), mask))
}
