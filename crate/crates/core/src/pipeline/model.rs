use std::sync::atomic::{AtomicUsize, Ordering};

use crate::attention::{tete_encode_on, AttentionMode, EncoderParams, EncoderShape, EncoderVars};
use crate::diffcore::{rng, Matrix, OptimizerState, ParamStore, ParamVars, Tape, Var};
use crate::error::{Error, Result};
use crate::gmf::{gmf_loss_on, rollout_on, rollout_teacher_forced_on, GapNetParams, GapNetVars};
use crate::lcr::{lcr_loss_on, LcrOptions};
use crate::scoring::{predict_on, score_loss_on, total_loss_on, HeadParams, HeadVars};

use super::checkpoint::{Checkpoint, Tensor};
use super::config::ModelDims;

pub const TETE_PREFIX: &str = "tete.";
pub const FLOW_PREFIX: &str = "flow.";
pub const HEAD_PREFIX: &str = "head.";

/// Which path produces scores: `H⁰ → TETE → head` or `H⁰ → flow → head`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stage {
    Stage1,
    Stage2,
}

impl Stage {
    pub fn tag(self) -> u8 {
        match self {
            Stage::Stage1 => 1,
            Stage::Stage2 => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Stage1 => "stage1",
            Stage::Stage2 => "stage2",
        }
    }
}

#[derive(Debug)]
pub struct Model {
    pub dims: ModelDims,
    pub params: ParamStore,
    pub stage: Stage,
    pub epoch: usize,
    /// Training-split score range used to map scores to `[0, 1]`.
    pub score_bounds: (f64, f64),
    pub optimizer: Option<OptimizerState>,
    /// Per-dimension mean and standard deviation of the training clips.
    pub feature_mean: Vec<f64>,
    pub feature_std: Vec<f64>,
    tete_calls: AtomicUsize,
}

impl Clone for Model {
    fn clone(&self) -> Self {
        Self {
            dims: self.dims,
            params: self.params.clone(),
            stage: self.stage,
            epoch: self.epoch,
            score_bounds: self.score_bounds,
            optimizer: self.optimizer.clone(),
            feature_mean: self.feature_mean.clone(),
            feature_std: self.feature_std.clone(),
            tete_calls: AtomicUsize::new(0),
        }
    }
}

impl Model {
    pub fn init(dims: ModelDims, seed: u64, score_bounds: (f64, f64)) -> Result<Self> {
        if !(score_bounds.1 > score_bounds.0) {
            return Err(Error::InvalidArgument(format!(
                "training scores span no range: {}..{}",
                score_bounds.0, score_bounds.1
            )));
        }
        let mut params = ParamStore::new();
        EncoderParams::init(encoder_shape(&dims, 0.0), rng::derive(seed, &[rng::tag("tete")]))?
            .insert_into(&mut params, TETE_PREFIX)?;
        GapNetParams::init_identity(dims.d, dims.flow_hidden, rng::derive(seed, &[rng::tag("flow")])).insert_into(&mut params)?;
        HeadParams::init(dims.d, rng::derive(seed, &[rng::tag("head")])).insert_into(&mut params)?;
        Ok(Self {
            dims,
            params,
            stage: Stage::Stage1,
            epoch: 0,
            score_bounds,
            optimizer: None,
            feature_mean: vec![0.0; dims.d],
            feature_std: vec![1.0; dims.d],
            tete_calls: AtomicUsize::new(0),
        })
    }

    /// Sets the input standardization from a set of `M×D` clip matrices.
    pub fn fit_standardization<'a>(&mut self, clips: impl IntoIterator<Item = &'a Matrix>) -> Result<()> {
        let d = self.dims.d;
        let (mut n, mut sum, mut sq) = (0usize, vec![0.0; d], vec![0.0; d]);
        for h in clips {
            if h.cols() != d {
                return Err(Error::shape("fit_standardization", format!("{} columns, model width {d}", h.cols())));
            }
            for r in 0..h.rows() {
                for (k, v) in h.row(r).iter().enumerate() {
                    sum[k] += v;
                    sq[k] += v * v;
                }
            }
            n += h.rows();
        }
        if n == 0 {
            return Err(Error::EmptyDataset);
        }
        let n = n as f64;
        self.feature_mean = sum.iter().map(|s| s / n).collect();
        self.feature_std = sq
            .iter()
            .zip(&self.feature_mean)
            .map(|(q, m)| (q / n - m * m).max(0.0).sqrt().max(1e-8))
            .collect();
        Ok(())
    }

    /// `H⁰` as the model sees it: raw features standardized per dimension.
    pub fn standardize(&self, h: &Matrix) -> Result<Matrix> {
        if h.cols() != self.dims.d {
            return Err(Error::shape("standardize", format!("features are {} wide, model expects {}", h.cols(), self.dims.d)));
        }
        let mut out = h.clone();
        for r in 0..out.rows() {
            for ((v, m), s) in out.row_mut(r).iter_mut().zip(&self.feature_mean).zip(&self.feature_std) {
                *v = (*v - m) / s;
            }
        }
        Ok(out)
    }

    pub fn fingerprint(&self) -> u64 {
        self.dims.fingerprint()
    }

    pub fn encoder_shape(&self, dropout: f64) -> EncoderShape {
        encoder_shape(&self.dims, dropout)
    }

    /// How many times the encoder has run since creation or the last reset.
    pub fn tete_calls(&self) -> usize {
        self.tete_calls.load(Ordering::Relaxed)
    }

    pub fn reset_tete_calls(&self) {
        self.tete_calls.store(0, Ordering::Relaxed);
    }

    pub fn normalize(&self, score: f64) -> f64 {
        (score - self.score_bounds.0) / (self.score_bounds.1 - self.score_bounds.0)
    }

    pub fn denormalize(&self, y: f64) -> f64 {
        self.score_bounds.0 + y * (self.score_bounds.1 - self.score_bounds.0)
    }

    /// Runs the encoder on the tape and counts the call.
    pub fn encode_on(
        &self,
        tape: &mut Tape,
        vars: &ParamVars,
        h0: Var,
        dropout: f64,
        training: bool,
        seed: u64,
    ) -> Result<Var> {
        self.tete_calls.fetch_add(1, Ordering::Relaxed);
        let shape = self.encoder_shape(dropout);
        let ev = EncoderVars::from_params(vars, TETE_PREFIX, self.dims.mode);
        tete_encode_on(tape, h0, &ev, &shape, training, seed)
    }

    fn refine_on(&self, tape: &mut Tape, vars: &ParamVars, features: &Matrix) -> Result<Var> {
        let h0 = self.standardize(features)?;
        let m = h0.rows();
        let x = tape.constant(h0);
        Ok(match self.stage {
            Stage::Stage1 => {
                if m > self.dims.m_max {
                    return Err(Error::SequenceTooLong { m, m_max: self.dims.m_max });
                }
                self.encode_on(tape, vars, x, 0.0, false, 0)?
            }
            Stage::Stage2 => rollout_on(tape, &GapNetVars::from_params(vars), x, self.dims.steps).final_state(),
        })
    }

    /// Refined clip features on the stage's inference path: `H¹` after stage 1,
    /// `Ĥ^{P/P}` after stage 2.
    pub fn refine(&self, features: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let vars = self.params.bind_constant(&mut tape);
        let refined = self.refine_on(&mut tape, &vars, features)?;
        tape.check_finite()?;
        Ok(tape.value(refined).clone())
    }

    /// Score for one video in original units through the stage's inference path.
    pub fn predict(&self, features: &Matrix) -> Result<f64> {
        let mut tape = Tape::new();
        let vars = self.params.bind_constant(&mut tape);
        let refined = self.refine_on(&mut tape, &vars, features)?;
        let y = predict_on(&mut tape, &HeadVars::from_params(&vars), refined);
        tape.check_finite()?;
        Ok(self.denormalize(tape.scalar(y)))
    }

    /// Parameters used at inference after stage 2: flow network and head.
    pub fn online_param_count(&self) -> usize {
        self.params
            .count_where(|n| n.starts_with(FLOW_PREFIX) || n.starts_with(HEAD_PREFIX))
    }

    /// Encoder parameters, needed only while training.
    pub fn offline_param_count(&self) -> usize {
        self.params.count_where(|n| n.starts_with(TETE_PREFIX))
    }

    pub fn reinit_head(&mut self, seed: u64) -> Result<()> {
        let head = HeadParams::init(self.dims.d, rng::derive(seed, &[rng::tag("head-reinit")]));
        self.params.set(crate::scoring::W1, head.w1)?;
        self.params.set(crate::scoring::B1, head.b1)?;
        self.params.set(crate::scoring::W2, head.w2)?;
        self.params.set(crate::scoring::B2, head.b2)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut c = Checkpoint::new(self.fingerprint());
        for i in 0..self.params.len() {
            c.push(self.params.name(i), Tensor::from_matrix(self.params.value(i)));
        }
        if let Some(opt) = &self.optimizer {
            for i in 0..self.params.len() {
                c.push(format!("momentum/{}", self.params.name(i)), Tensor::from_matrix(&opt.momentum_buffers[i]));
            }
            c.push(
                "meta/optimizer",
                Tensor::vector(vec![opt.momentum, opt.weight_decay, opt.epoch as f64, opt.total_epochs as f64]),
            );
        }
        c.push("meta/dims", Tensor::vector(self.dims.to_values()));
        c.push("meta/stage", Tensor::vector(vec![self.stage.tag() as f64]));
        c.push("meta/epoch", Tensor::vector(vec![self.epoch as f64]));
        c.push("meta/score_bounds", Tensor::vector(vec![self.score_bounds.0, self.score_bounds.1]));
        c.push("meta/feature_mean", Tensor::vector(self.feature_mean.clone()));
        c.push("meta/feature_std", Tensor::vector(self.feature_std.clone()));
        c
    }

    /// Rebuilds a model; `expected` is the fingerprint the caller's config implies.
    pub fn from_checkpoint(c: &Checkpoint, expected: Option<u64>, force: bool) -> Result<Self> {
        if let Some(fp) = expected {
            c.check_fingerprint(fp, force)?;
        }
        let malformed = |detail: String| Error::Malformed {
            what: "checkpoint",
            detail,
        };
        let dims = ModelDims::from_values(&c.require("meta/dims")?.data)?;
        let payload: usize = c.entries.iter().map(|(_, t)| t.data.len()).sum();
        let widest = [dims.d_k, dims.flow_hidden, dims.m_max, 2 * dims.d].into_iter().max().unwrap_or(0);
        let templates = if dims.mode == AttentionMode::Tesa { dims.d_k.checked_mul(dims.d_t) } else { Some(0) };
        let needed = [dims.d.checked_mul(widest), templates];
        if needed.iter().any(|n| n.is_none_or(|n| n > payload)) {
            return Err(malformed("dimensions exceed the stored payload".into()));
        }
        if !force && dims.fingerprint() != c.fingerprint {
            return Err(Error::FingerprintMismatch {
                expected: dims.fingerprint(),
                found: c.fingerprint,
            });
        }
        let scalar = |name: &str| -> Result<f64> {
            match c.require(name)?.data.as_slice() {
                &[v] => Ok(v),
                _ => Err(malformed(format!("{name} must hold one value"))),
            }
        };
        let stage = match scalar("meta/stage")? {
            1.0 => Stage::Stage1,
            2.0 => Stage::Stage2,
            v => return Err(malformed(format!("unknown stage tag {v}"))),
        };
        let epoch = scalar("meta/epoch")?;
        if !(epoch >= 0.0 && epoch.fract() == 0.0) {
            return Err(malformed(format!("bad epoch {epoch}")));
        }
        let bounds = match c.require("meta/score_bounds")?.data.as_slice() {
            &[lo, hi] if hi > lo => (lo, hi),
            _ => return Err(malformed("bad score bounds".into())),
        };
        if dims.d == 0 || dims.m_max == 0 || dims.steps == 0 || dims.flow_hidden == 0 || dims.d_k == 0 {
            return Err(malformed("zero model dimension".into()));
        }
        let mut model = Self::init(dims, 0, bounds).map_err(|e| malformed(e.to_string()))?;
        model.stage = stage;
        model.epoch = epoch as usize;
        for (name, target) in [("meta/feature_mean", &mut model.feature_mean), ("meta/feature_std", &mut model.feature_std)] {
            let v = &c.require(name)?.data;
            if v.len() != dims.d || v.iter().any(|x| !x.is_finite()) {
                return Err(malformed(format!("{name} does not match width {}", dims.d)));
            }
            *target = v.clone();
        }
        if model.feature_std.iter().any(|&s| s <= 0.0) {
            return Err(malformed("non-positive feature scale".into()));
        }
        let names: Vec<String> = model.params.names().map(str::to_string).collect();
        for name in &names {
            let m = c.require(name)?.to_matrix()?;
            model
                .params
                .set(name, m)
                .map_err(|_| malformed(format!("entry {name} has the wrong shape")))?;
        }
        if let Some(meta) = c.get("meta/optimizer") {
            let v = &meta.data;
            if v.len() != 4 {
                return Err(malformed("bad optimizer entry".into()));
            }
            let mut opt = OptimizerState::new(&model.params, v[3] as usize);
            opt.momentum = v[0];
            opt.weight_decay = v[1];
            opt.epoch = v[2] as usize;
            for (i, name) in names.iter().enumerate() {
                let buf = c.require(&format!("momentum/{name}"))?.to_matrix()?;
                if buf.shape() != model.params.value(i).shape() {
                    return Err(malformed(format!("momentum for {name} has the wrong shape")));
                }
                opt.momentum_buffers[i] = buf;
            }
            model.optimizer = Some(opt);
        }
        let known = names.len() * if model.optimizer.is_some() { 2 } else { 1 };
        let meta = 6 + model.optimizer.is_some() as usize;
        let mut seen: Vec<&str> = c.entries.iter().map(|(n, _)| n.as_str()).collect();
        seen.sort_unstable();
        seen.dedup();
        if c.entries.len() != known + meta || seen.len() != c.entries.len() {
            return Err(malformed("unexpected or duplicate entries".into()));
        }
        Ok(model)
    }
}

fn encoder_shape(dims: &ModelDims, dropout: f64) -> EncoderShape {
    EncoderShape {
        use_positions: dims.use_positions,
        dropout,
        ..EncoderShape::new(dims.d, dims.d_k, dims.d_t, dims.m_max, dims.mode)
    }
}

/// Which graph a batch loss builds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// `H⁰ → TETE → head`; list-wise term on `H¹`.
    Encoder,
    /// `H⁰ → flow → head` with `H¹` as the flow target; list-wise term on `Ĥ^{P/P}`.
    Flow,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossSpec {
    pub phase: Phase,
    pub lambda_m: f64,
    pub lambda_r: f64,
    pub lcr: Option<LcrOptions>,
    pub teacher_forcing: bool,
    pub score_into_flow: bool,
    pub mean_score_loss: bool,
    pub dropout: f64,
    pub training: bool,
}

/// Loss terms of one batch as tape variables.
#[derive(Clone, Debug)]
pub struct BatchLoss {
    pub l_s: Var,
    pub l_m: Option<Var>,
    pub l_r: Option<Var>,
    pub total: Var,
    pub predictions: Vec<Var>,
}

/// Builds the training loss for `batch` of `(H⁰, normalized score)` pairs.
pub fn batch_loss_on(
    tape: &mut Tape,
    vars: &ParamVars,
    model: &Model,
    spec: &LossSpec,
    batch: &[(&Matrix, f64)],
    seed: u64,
) -> Result<BatchLoss> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let head = HeadVars::from_params(vars);
    let phi = GapNetVars::from_params(vars);
    let steps = model.dims.steps;
    let mut predictions = Vec::with_capacity(batch.len());
    let mut features = Vec::with_capacity(batch.len());
    let mut flow_terms = Vec::new();
    for (i, (h0, _)) in batch.iter().enumerate() {
        let x = tape.constant((*h0).clone());
        let h1 = model.encode_on(tape, vars, x, spec.dropout, spec.training, rng::derive(seed, &[i as u64]))?;
        let refined = match spec.phase {
            Phase::Encoder => h1,
            Phase::Flow => {
                let traj = if spec.teacher_forcing {
                    rollout_teacher_forced_on(tape, &phi, x, h1, steps)
                } else {
                    rollout_on(tape, &phi, x, steps)
                };
                let (global, local) = gmf_loss_on(tape, &traj, x, h1);
                flow_terms.push(tape.add(global, local));
                traj.final_state()
            }
        };
        let head_in = if spec.phase == Phase::Flow && !spec.score_into_flow {
            tape.detach(refined)
        } else {
            refined
        };
        predictions.push(predict_on(tape, &head, head_in));
        features.push(refined);
    }
    let targets: Vec<f64> = batch.iter().map(|(_, s)| *s).collect();
    let l_s = score_loss_on(tape, &predictions, &targets, spec.mean_score_loss)?;
    let l_m = if flow_terms.is_empty() {
        None
    } else {
        let sum = tape.add_all(&flow_terms);
        Some(tape.scale(sum, 1.0 / batch.len() as f64))
    };
    let l_r = match spec.lcr {
        Some(opts) if batch.len() >= 2 => Some(lcr_loss_on(tape, &features, &targets, opts)?),
        _ => None,
    };
    let total = total_loss_on(tape, l_s, l_m, l_r, spec.lambda_m, spec.lambda_r);
    Ok(BatchLoss {
        l_s,
        l_m,
        l_r,
        total,
        predictions,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pipeline::config::TrainConfig;

    fn tiny() -> Model {
        let cfg = TrainConfig {
            d_k: 4,
            d_t: 2,
            steps: 2,
            ..TrainConfig::ci()
        };
        Model::init(ModelDims::new(&cfg, 6, 3), 11, (10.0, 30.0)).unwrap()
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut m = tiny();
        m.stage = Stage::Stage2;
        m.epoch = 5;
        m.optimizer = Some(OptimizerState::new(&m.params, 9));
        let c = m.to_checkpoint();
        let back = Model::from_checkpoint(&c, Some(m.fingerprint()), false).unwrap();
        assert_eq!(back.to_checkpoint().encode().unwrap(), c.encode().unwrap());
        assert_eq!(back.stage, Stage::Stage2);
        assert!(matches!(
            Model::from_checkpoint(&c, Some(m.fingerprint() ^ 1), false),
            Err(Error::FingerprintMismatch { .. })
        ));
    }

    #[test]
    fn stage2_prediction_skips_encoder() {
        let mut m = tiny();
        let h = Matrix::from_fn(3, 6, |r, c| (r + c) as f64 * 0.1);
        m.predict(&h).unwrap();
        assert_eq!(m.tete_calls(), 1);
        m.stage = Stage::Stage2;
        m.reset_tete_calls();
        m.predict(&h).unwrap();
        assert_eq!(m.tete_calls(), 0);
    }

    #[test]
    fn normalization_inverts() {
        let m = tiny();
        assert_eq!(m.normalize(10.0), 0.0);
        assert_eq!(m.normalize(30.0), 1.0);
        assert_eq!(m.denormalize(m.normalize(17.5)), 17.5);
        assert!(Model::init(m.dims, 0, (3.0, 3.0)).is_err());
    }

    #[test]
    fn parameter_accounting_splits_online_and_offline() {
        let m = tiny();
        assert_eq!(m.online_param_count() + m.offline_param_count(), m.params.count_where(|_| true));
        assert!(m.offline_param_count() > 0 && m.online_param_count() > 0);
    }
}
