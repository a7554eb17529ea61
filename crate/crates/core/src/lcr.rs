//! List-wise contrastive regularization.
//!
//! For a batch of `B` videos, row `i` of the feature-space distance matrix
//! `D` and of the score-space matrix `S = |s − sᵀ|` are turned into
//! distributions over the other `B − 1` videos and pulled together with a
//! symmetric KL divergence.

use std::str::FromStr;

use crate::diffcore::{chamfer_forward, softmax_rows, Matrix, Tape, Var};
use crate::error::{Error, Result};

/// How a distance row becomes a distribution.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum RowNormalization {
    #[default]
    Softmax,
    /// `(x + ε) / Σ(x + ε)` with `ε = 1e-8`.
    Sum,
}

pub const SUM_NORMALIZATION_EPS: f64 = 1e-8;

impl RowNormalization {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Softmax => "softmax",
            Self::Sum => "sum",
        }
    }
}

impl FromStr for RowNormalization {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "softmax" => Ok(Self::Softmax),
            "sum" => Ok(Self::Sum),
            other => Err(Error::Config(format!("unknown row normalization {other:?}"))),
        }
    }
}

/// Divergence between matched rows.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Alignment {
    #[default]
    SymmetricKl,
    /// Mean of `(p − q)²` over every off-diagonal entry.
    MeanSquared,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct LcrOptions {
    pub normalization: RowNormalization,
    pub alignment: Alignment,
}

/// Directed clip-matching distance `Σ_m min_n ‖a_m − b_n‖²`.
pub fn action_distance(a: &Matrix, b: &Matrix) -> Result<f64> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(Error::shape("action_distance", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(chamfer_forward(a, b).0)
}

/// For each clip of `a`, the index of its nearest clip in `b` (ties to the smallest index).
pub fn nearest_clips(a: &Matrix, b: &Matrix) -> Result<Vec<usize>> {
    if a.shape() != b.shape() || a.is_empty() {
        return Err(Error::shape("nearest_clips", format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(chamfer_forward(a, b).1)
}

/// Fraction of clip pairs `m₁ < m₂` whose matches keep their order, `n₁ ≤ n₂`.
pub fn ordering_consistency(a: &Matrix, b: &Matrix) -> Result<f64> {
    let matches = nearest_clips(a, b)?;
    let (mut kept, mut total) = (0usize, 0usize);
    for m1 in 0..matches.len() {
        for m2 in m1 + 1..matches.len() {
            total += 1;
            if matches[m1] <= matches[m2] {
                kept += 1;
            }
        }
    }
    Ok(if total == 0 { 1.0 } else { kept as f64 / total as f64 })
}

fn check_batch(b: usize) -> Result<()> {
    if b < 2 {
        return Err(Error::InvalidArgument(format!("list-wise regularization needs a batch of at least 2, got {b}")));
    }
    Ok(())
}

pub fn distance_matrix(batch: &[Matrix]) -> Result<Matrix> {
    check_batch(batch.len())?;
    let mut d = Matrix::zeros(batch.len(), batch.len());
    for i in 0..batch.len() {
        for j in 0..batch.len() {
            if i != j {
                d.set(i, j, action_distance(&batch[i], &batch[j])?);
            }
        }
    }
    Ok(d)
}

pub fn score_distance_matrix(scores: &[f64]) -> Result<Matrix> {
    check_batch(scores.len())?;
    Ok(Matrix::from_fn(scores.len(), scores.len(), |i, j| (scores[i] - scores[j]).abs()))
}

/// Drops entry `self_index` and softmaxes the rest.
pub fn row_to_distribution(row: &[f64], self_index: usize) -> Result<Vec<f64>> {
    if row.len() < 2 || self_index >= row.len() {
        return Err(Error::InvalidArgument(format!(
            "row of length {} with self index {self_index} leaves no entries",
            row.len()
        )));
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            op: "row_to_distribution".into(),
        });
    }
    let rest: Vec<f64> = row
        .iter()
        .enumerate()
        .filter(|&(k, _)| k != self_index)
        .map(|(_, &v)| v)
        .collect();
    Ok(softmax_rows(&Matrix::row_vector(&rest)).into_vec())
}

/// Symmetric KL with softmax rows.
pub fn lcr_loss(d: &Matrix, s: &Matrix) -> Result<f64> {
    lcr_loss_with(d, s, LcrOptions::default())
}

pub fn lcr_loss_with(d: &Matrix, s: &Matrix, opts: LcrOptions) -> Result<f64> {
    let b = d.rows();
    if d.shape() != (b, b) || s.shape() != (b, b) {
        return Err(Error::shape("lcr_loss", format!("{:?} vs {:?}", d.shape(), s.shape())));
    }
    check_batch(b)?;
    if !d.is_finite() || !s.is_finite() {
        return Err(Error::NonFinite { op: "lcr_loss".into() });
    }
    let mut tape = Tape::new();
    let dv = tape.constant(d.clone());
    let sv = tape.constant(s.clone());
    let out = alignment_on(&mut tape, dv, sv, opts);
    Ok(tape.scalar(out))
}

fn distributions_on(tape: &mut Tape, x: Var, norm: RowNormalization) -> (Var, Var) {
    let off = tape.off_diagonal(x);
    match norm {
        RowNormalization::Softmax => {
            let logp = tape.log_softmax_rows(off);
            let p = tape.exp(logp);
            (p, logp)
        }
        RowNormalization::Sum => {
            let p = tape.sum_normalize_rows(off, SUM_NORMALIZATION_EPS);
            let logp = tape.log(p);
            (p, logp)
        }
    }
}

/// Alignment loss between two `B×B` distance matrices already on the tape.
pub fn alignment_on(tape: &mut Tape, d: Var, s: Var, opts: LcrOptions) -> Var {
    let (q, logq) = distributions_on(tape, d, opts.normalization);
    let (p, logp) = distributions_on(tape, s, opts.normalization);
    let diff = tape.sub(p, q);
    match opts.alignment {
        // KL(p‖q) + KL(q‖p) = Σ (p − q)(ln p − ln q)
        Alignment::SymmetricKl => {
            let logdiff = tape.sub(logp, logq);
            let prod = tape.mul(diff, logdiff);
            tape.sum(prod)
        }
        Alignment::MeanSquared => {
            let n = tape.value(diff).len() as f64;
            let sq = tape.sum_squares(diff);
            tape.scale(sq, 1.0 / n)
        }
    }
}

/// Builds `D` from per-sample feature vars and aligns it with the constant score matrix.
pub fn lcr_loss_on(tape: &mut Tape, features: &[Var], scores: &[f64], opts: LcrOptions) -> Result<Var> {
    let b = features.len();
    check_batch(b)?;
    if scores.len() != b {
        return Err(Error::shape("lcr_loss", format!("{b} feature sets, {} scores", scores.len())));
    }
    let zero = tape.constant(Matrix::scalar(0.0));
    let mut parts = Vec::with_capacity(b * b);
    for i in 0..b {
        for j in 0..b {
            parts.push(if i == j { zero } else { tape.chamfer(features[i], features[j]) });
        }
    }
    let d = tape.assemble(parts, b, b);
    let s = tape.constant(score_distance_matrix(scores)?);
    Ok(alignment_on(tape, d, s, opts))
}
