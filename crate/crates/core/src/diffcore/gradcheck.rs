use super::{Matrix, ParamStore, ParamVars, Tape, Var};
use crate::error::{Error, Result};

/// Per-parameter gradients aligned with a [`ParamStore`]'s order.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients(Vec<Matrix>);

impl Gradients {
    pub fn from_vec(grads: Vec<Matrix>) -> Self {
        Self(grads)
    }

    pub fn zeros_like(params: &ParamStore) -> Self {
        Self(
            (0..params.len())
                .map(|i| {
                    let (r, c) = params.value(i).shape();
                    Matrix::zeros(r, c)
                })
                .collect(),
        )
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn at(&self, i: usize) -> &Matrix {
        &self.0[i]
    }

    pub fn get<'a>(&'a self, params: &ParamStore, name: &str) -> Option<&'a Matrix> {
        params.index_of(name).map(|i| &self.0[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.0.iter()
    }

    pub fn global_norm(&self) -> f64 {
        self.0.iter().map(Matrix::sum_squares).sum::<f64>().sqrt()
    }

    /// Scales all gradients down so their global norm is at most `max_norm`.
    /// Returns the norm before clipping.
    pub fn clip_global_norm(&mut self, max_norm: f64) -> f64 {
        let norm = self.global_norm();
        if norm > max_norm {
            let k = max_norm / norm;
            for g in &mut self.0 {
                *g = g.scale(k);
            }
        }
        norm
    }
}

/// Evaluates `loss` on a fresh tape and differentiates it with respect to
/// every non-frozen parameter. Frozen parameters get zero gradients.
pub fn gradient_of<F>(params: &ParamStore, loss: F) -> Result<(f64, Gradients)>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<Var>,
{
    let (value, grads, ()) = gradient_with(params, |t, v| Ok((loss(t, v)?, ())))?;
    Ok((value, grads))
}

/// Like [`gradient_of`], but `loss` also returns values read off the tape
/// while the graph was built.
pub fn gradient_with<F, T>(params: &ParamStore, loss: F) -> Result<(f64, Gradients, T)>
where
    F: FnOnce(&mut Tape, &ParamVars) -> Result<(Var, T)>,
{
    let mut tape = Tape::new();
    let vars = params.bind(&mut tape);
    let (out, extra) = loss(&mut tape, &vars)?;
    tape.check_finite()?;
    let value = tape.scalar(out);
    let mut adj = tape.backward(out);
    let grads = (0..params.len())
        .map(|i| {
            adj.take(vars.at(i)).unwrap_or_else(|| {
                let (r, c) = params.value(i).shape();
                Matrix::zeros(r, c)
            })
        })
        .collect();
    Ok((value, Gradients(grads), extra))
}

fn evaluate<F>(params: &ParamStore, loss: &F) -> Result<f64>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = params.bind_constant(&mut tape);
    let out = loss(&mut tape, &vars)?;
    tape.check_finite()?;
    Ok(tape.scalar(out))
}

/// Central differences `(L(p+h) − L(p−h)) / 2h` for every scalar parameter entry.
///
/// `loss` must be deterministic; dropout masks have to come from fixed seeds.
pub fn finite_diff_grad<F>(params: &ParamStore, loss: F, h: f64) -> Result<Gradients>
where
    F: Fn(&mut Tape, &ParamVars) -> Result<Var>,
{
    if h <= 0.0 {
        return Err(Error::InvalidArgument(format!("finite-difference step must be positive, got {h}")));
    }
    let mut work = params.clone();
    let mut grads = Vec::with_capacity(params.len());
    for i in 0..params.len() {
        let (r, c) = params.value(i).shape();
        let mut g = Matrix::zeros(r, c);
        if !params.is_frozen(i) {
            for k in 0..r * c {
                let orig = work.value(i).as_slice()[k];
                work.value_mut(i).as_mut_slice()[k] = orig + h;
                let plus = evaluate(&work, &loss)?;
                work.value_mut(i).as_mut_slice()[k] = orig - h;
                let minus = evaluate(&work, &loss)?;
                work.value_mut(i).as_mut_slice()[k] = orig;
                let d = (plus - minus) / (2.0 * h);
                if !d.is_finite() {
                    return Err(Error::NonFinite {
                        op: format!("finite difference of {}", params.name(i)),
                    });
                }
                g.as_mut_slice()[k] = d;
            }
        }
        grads.push(g);
    }
    Ok(Gradients(grads))
}

/// Largest entrywise `|a − b| / max(|a|, |b|, 1e-6)` across all parameters.
///
/// The floor keeps entries whose true gradient is essentially zero from
/// dominating through finite-difference round-off.
pub fn max_relative_error(a: &Gradients, b: &Gradients) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .flat_map(|(x, y)| x.as_slice().iter().zip(y.as_slice()))
        .map(|(&x, &y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut p = ParamStore::new();
        p.insert("p", Matrix::scalar(3.0), true).unwrap();
        let fd = finite_diff_grad(&p, |t, v| Ok(t.mul(v.get("p"), v.get("p"))), 1e-5).unwrap();
        assert!((fd.at(0).item() - 6.0).abs() < 1e-7);
        let (l, g) = gradient_of(&p, |t, v| Ok(t.mul(v.get("p"), v.get("p")))).unwrap();
        assert_eq!(l, 9.0);
        assert_eq!(g.at(0).item(), 6.0);
    }

    #[test]
    fn constant_loss_has_zero_gradients() {
        let mut p = ParamStore::new();
        p.insert("a", Matrix::filled(2, 2, 1.0), true).unwrap();
        p.insert("b", Matrix::scalar(2.0), true).unwrap();
        let f = |t: &mut Tape, v: &ParamVars| Ok(t.sum_squares(v.get("b")));
        let fd = finite_diff_grad(&p, |t, _| Ok(t.constant(Matrix::scalar(4.0))), 1e-5).unwrap();
        assert!(fd.iter().all(|g| g.max_abs() == 0.0));
        let (_, g) = gradient_of(&p, f).unwrap();
        assert_eq!(g.at(0).max_abs(), 0.0);
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let mut p = ParamStore::new();
        p.insert("p", Matrix::scalar(-1.0), true).unwrap();
        let err = gradient_of(&p, |t, v| {
            let l = t.log(v.get("p"));
            Ok(t.sum(l))
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { op } if op == "log"));
    }

    #[test]
    fn frozen_parameters_get_zero_gradient() {
        let mut p = ParamStore::new();
        p.insert("p", Matrix::scalar(2.0), true).unwrap();
        p.set_frozen_prefix("p", true);
        let (_, g) = gradient_of(&p, |t, v| Ok(t.sum_squares(v.get("p")))).unwrap();
        assert_eq!(g.at(0).item(), 0.0);
    }
}
