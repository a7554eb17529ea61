//! Clip pooling, the regression head and the loss composition.

use crate::attention::xavier;
use crate::diffcore::{rng, Matrix, ParamStore, ParamVars, Tape, Var};
use crate::error::{Error, Result};

pub const W1: &str = "head.w1";
pub const B1: &str = "head.b1";
pub const W2: &str = "head.w2";
pub const B2: &str = "head.b2";

pub const LAMBDA_M: f64 = 0.5;
pub const LAMBDA_R: f64 = 0.01;

/// `D → D/2 → 1` with ReLU on the pooled clip vector.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl HeadParams {
    pub fn init(d: usize, seed: u64) -> Self {
        let hidden = (d / 2).max(1);
        let mut r = rng::stream(rng::derive(seed, &[rng::tag("head-init")]));
        Self {
            w1: xavier(d, hidden, &mut r),
            b1: Matrix::zeros(1, hidden),
            w2: xavier(hidden, 1, &mut r),
            b2: Matrix::zeros(1, 1),
        }
    }

    /// All weights zero, output bias `beta`.
    pub fn constant(d: usize, beta: f64) -> Self {
        let hidden = (d / 2).max(1);
        Self {
            w1: Matrix::zeros(d, hidden),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(hidden, 1),
            b2: Matrix::scalar(beta),
        }
    }

    pub fn d_model(&self) -> usize {
        self.w1.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.w1.cols();
        if self.b1.shape() != (1, h) || self.w2.shape() != (h, 1) || self.b2.shape() != (1, 1) {
            return Err(Error::shape(
                "head",
                format!(
                    "w1 {:?}, b1 {:?}, w2 {:?}, b2 {:?}",
                    self.w1.shape(),
                    self.b1.shape(),
                    self.w2.shape(),
                    self.b2.shape()
                ),
            ));
        }
        Ok(())
    }

    pub fn insert_into(&self, store: &mut ParamStore) -> Result<()> {
        store.insert(W1, self.w1.clone(), true)?;
        store.insert(B1, self.b1.clone(), false)?;
        store.insert(W2, self.w2.clone(), true)?;
        store.insert(B2, self.b2.clone(), false)?;
        Ok(())
    }

    pub fn from_store(store: &ParamStore) -> Result<Self> {
        let get = |n: &str| {
            store
                .get(n)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {n}")))
        };
        let p = Self {
            w1: get(W1)?,
            b1: get(B1)?,
            w2: get(W2)?,
            b2: get(B2)?,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HeadVars {
    pub w1: Var,
    pub b1: Var,
    pub w2: Var,
    pub b2: Var,
}

impl HeadVars {
    pub fn from_params(vars: &ParamVars) -> Self {
        Self {
            w1: vars.get(W1),
            b1: vars.get(B1),
            w2: vars.get(W2),
            b2: vars.get(B2),
        }
    }
}

/// Mean over clip rows.
pub fn pool_clips(h: &Matrix) -> Result<Vec<f64>> {
    if h.rows() == 0 {
        return Err(Error::shape("pool_clips", "no clips"));
    }
    let mut out = vec![0.0; h.cols()];
    for r in 0..h.rows() {
        for (o, v) in out.iter_mut().zip(h.row(r)) {
            *o += v;
        }
    }
    let m = h.rows() as f64;
    out.iter_mut().for_each(|o| *o /= m);
    Ok(out)
}

pub fn predict_on(tape: &mut Tape, head: &HeadVars, h: Var) -> Var {
    let pooled = tape.mean_rows(h);
    let x = tape.matmul(pooled, head.w1);
    let x = tape.add_row(x, head.b1);
    let x = tape.relu(x);
    let y = tape.matmul(x, head.w2);
    tape.add_row(y, head.b2)
}

pub fn predict_score(h: &Matrix, head: &HeadParams) -> Result<f64> {
    head.validate()?;
    if h.rows() == 0 || h.cols() != head.d_model() {
        return Err(Error::shape(
            "predict_score",
            format!("features {:?}, head width {}", h.shape(), head.d_model()),
        ));
    }
    let mut tape = Tape::new();
    let vars = HeadVars {
        w1: tape.constant(head.w1.clone()),
        b1: tape.constant(head.b1.clone()),
        w2: tape.constant(head.w2.clone()),
        b2: tape.constant(head.b2.clone()),
    };
    let x = tape.constant(h.clone());
    let y = predict_on(&mut tape, &vars, x);
    Ok(tape.scalar(y))
}

/// `½·Σ(s − ŝ)²`, or the batch mean of the squared errors when `mean` is set.
pub fn score_loss_on(tape: &mut Tape, predictions: &[Var], targets: &[f64], mean: bool) -> Result<Var> {
    if predictions.len() != targets.len() || predictions.is_empty() {
        return Err(Error::shape(
            "score_loss",
            format!("{} predictions, {} targets", predictions.len(), targets.len()),
        ));
    }
    let b = predictions.len();
    let pred = tape.assemble(predictions.to_vec(), b, 1);
    let target = tape.constant(Matrix::column_vector(targets));
    let diff = tape.sub(pred, target);
    let sq = tape.sum_squares(diff);
    Ok(tape.scale(sq, if mean { 1.0 / b as f64 } else { 0.5 }))
}

pub fn score_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    if predictions.len() != targets.len() {
        return Err(Error::shape(
            "score_loss",
            format!("{} predictions, {} targets", predictions.len(), targets.len()),
        ));
    }
    Ok(0.5 * predictions.iter().zip(targets).map(|(p, t)| (t - p) * (t - p)).sum::<f64>())
}

/// `L_S + λ_M·L_M + λ_R·L_R`.
pub fn total_loss(l_s: f64, l_m: f64, l_r: f64, lambda_m: f64, lambda_r: f64) -> Result<f64> {
    if ![l_s, l_m, l_r, lambda_m, lambda_r].iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite { op: "total_loss".into() });
    }
    Ok(l_s + lambda_m * l_m + lambda_r * l_r)
}

pub fn total_loss_on(tape: &mut Tape, l_s: Var, l_m: Option<Var>, l_r: Option<Var>, lambda_m: f64, lambda_r: f64) -> Var {
    let mut total = l_s;
    if let Some(m) = l_m {
        let m = tape.scale(m, lambda_m);
        total = tape.add(total, m);
    }
    if let Some(r) = l_r {
        let r = tape.scale(r, lambda_r);
        total = tape.add(total, r);
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn pooling_examples() {
        assert_eq!(pool_clips(&Matrix::from_rows(&[[0.0], [2.0]])).unwrap(), vec![1.0]);
        let same = Matrix::from_rows(&[[1.0, -2.0], [1.0, -2.0], [1.0, -2.0]]);
        assert_eq!(pool_clips(&same).unwrap(), vec![1.0, -2.0]);
    }

    #[test]
    fn constant_head_returns_bias() {
        let head = HeadParams::constant(4, 0.37);
        let h = Matrix::from_fn(3, 4, |r, c| (r * 4 + c) as f64);
        assert_eq!(predict_score(&h, &head).unwrap(), 0.37);
    }

    #[test]
    fn head_matches_direct_evaluation() {
        let head = HeadParams::init(6, 3);
        let mut r = rng::stream(4);
        let h = Matrix::from_fn(5, 6, |_, _| r.random_range(-1.0..1.0));
        let pooled = Matrix::row_vector(&pool_clips(&h).unwrap());
        let hidden = pooled.matmul(&head.w1).add(&head.b1).map(|v| v.max(0.0));
        let expected = hidden.matmul(&head.w2).add(&head.b2).item();
        assert!((predict_score(&h, &head).unwrap() - expected).abs() < 1e-14);
    }

    #[test]
    fn prediction_ignores_clip_order() {
        let head = HeadParams::init(4, 5);
        let h = Matrix::from_fn(4, 4, |r, c| ((r * 7 + c * 3) % 5) as f64 - 2.0);
        let a = predict_score(&h, &head).unwrap();
        let b = predict_score(&h.permute_rows(&[2, 0, 3, 1]), &head).unwrap();
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn score_loss_examples() {
        assert_eq!(score_loss(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(score_loss(&[0.0], &[2.0]).unwrap(), 2.0);
        assert!(score_loss(&[0.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn score_loss_tape_forms() {
        let mut t = Tape::new();
        let p = [t.constant(Matrix::scalar(0.0)), t.constant(Matrix::scalar(1.0))];
        let sum = score_loss_on(&mut t, &p, &[2.0, 1.0], false).unwrap();
        let mean = score_loss_on(&mut t, &p, &[2.0, 1.0], true).unwrap();
        assert_eq!(t.scalar(sum), 2.0);
        assert_eq!(t.scalar(mean), 2.0);
    }

    #[test]
    fn total_loss_examples() {
        assert_eq!(total_loss(0.0, 0.0, 0.0, LAMBDA_M, LAMBDA_R).unwrap(), 0.0);
        assert!((total_loss(1.0, 2.0, 3.0, LAMBDA_M, LAMBDA_R).unwrap() - 2.03).abs() < 1e-15);
        assert_eq!(total_loss(1.5, 2.0, 3.0, 0.0, 0.0).unwrap(), 1.5);
        assert!(total_loss(f64::NAN, 0.0, 0.0, LAMBDA_M, LAMBDA_R).is_err());
    }
}
