use rand::seq::SliceRandom;

use crate::diffcore::{cosine_lr, gradient_with, rng, sgd_step, Matrix, OptimizerState};
use crate::error::{Error, Result};
use crate::lcr::ordering_consistency;
use crate::metrics::{spearman, EvalReport};
use crate::synthdata::Dataset;

use super::config::{ModelDims, Strategy, TrainConfig, MIN_LCR_BATCH};
use super::model::{batch_loss_on, LossSpec, Model, Phase, Stage, FLOW_PREFIX, TETE_PREFIX};

/// Averages over one epoch's batches.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub stage: Stage,
    pub epoch: usize,
    pub lr: f64,
    pub loss_s: f64,
    pub loss_m: f64,
    pub loss_r: f64,
    pub total: f64,
    pub train_srcc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: Model,
    pub history: Vec<EpochLog>,
}

fn check_data(data: &Dataset) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    Ok(())
}

fn score_bounds(data: &Dataset) -> (f64, f64) {
    (data.manifest.score_min, data.manifest.score_max)
}

/// Fresh model sized for `data` under `cfg`.
pub fn init_model(data: &Dataset, cfg: &TrainConfig) -> Result<Model> {
    cfg.validate()?;
    check_data(data)?;
    let dims = ModelDims::new(cfg, data.manifest.d, data.manifest.m);
    let mut model = Model::init(dims, rng::derive(cfg.seed, &[rng::tag("init")]), score_bounds(data))?;
    model.fit_standardization(data.samples.iter().map(|s| &s.features))?;
    Ok(model)
}

fn spec_for(cfg: &TrainConfig, phase: Phase, lcr: bool) -> LossSpec {
    LossSpec {
        phase,
        lambda_m: cfg.lambda_m,
        lambda_r: cfg.lambda_r,
        lcr: lcr.then(|| cfg.lcr_options()),
        teacher_forcing: cfg.teacher_forcing,
        score_into_flow: cfg.score_into_flow,
        mean_score_loss: cfg.mean_score_loss,
        dropout: cfg.dropout,
        training: true,
    }
}

/// Shuffled batches for one epoch. A short final batch is kept only if the
/// list-wise term can use it.
fn batches(n: usize, batch: usize, lcr: bool, seed: u64) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::stream(seed));
    order
        .chunks(batch)
        .filter(|c| c.len() == batch || !lcr || c.len() >= MIN_LCR_BATCH)
        .map(<[usize]>::to_vec)
        .collect()
}

fn run_epochs(
    model: &mut Model,
    data: &Dataset,
    cfg: &TrainConfig,
    spec: &LossSpec,
    epochs: usize,
) -> Result<Vec<EpochLog>> {
    let stage_tag = model.stage.tag() as u64;
    let normalized: Vec<(Matrix, f64)> = data
        .samples
        .iter()
        .map(|s| Ok((model.standardize(&s.features)?, model.normalize(s.score))))
        .collect::<Result<_>>()?;
    let mut opt = OptimizerState::new(&model.params, epochs);
    opt.momentum = cfg.momentum;
    opt.weight_decay = cfg.weight_decay;
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let lr = cosine_lr(epoch, epochs, cfg.lr_max, cfg.lr_min)?;
        let shuffle_seed = rng::derive(cfg.seed, &[rng::tag("shuffle"), stage_tag, epoch as u64]);
        let plan = batches(normalized.len(), cfg.batch, spec.lcr.is_some(), shuffle_seed);
        let (mut ls, mut lm, mut lr_sum, mut total) = (0.0, 0.0, 0.0, 0.0);
        let mut preds = Vec::with_capacity(normalized.len());
        let mut targets = Vec::with_capacity(normalized.len());
        for (step, idx) in plan.iter().enumerate() {
            let batch: Vec<(&Matrix, f64)> = idx.iter().map(|&i| (&normalized[i].0, normalized[i].1)).collect();
            let seed = rng::derive(cfg.seed, &[rng::tag("dropout"), stage_tag, epoch as u64, step as u64]);
            let (value, mut grads, parts) = gradient_with(&model.params, |tape, vars| {
                let loss = batch_loss_on(tape, vars, model, spec, &batch, seed)?;
                let read = |v: Option<_>| v.map_or(0.0, |v| tape.scalar(v));
                let parts = (
                    tape.scalar(loss.l_s),
                    read(loss.l_m),
                    read(loss.l_r),
                    loss.predictions.iter().map(|&p| tape.scalar(p)).collect::<Vec<_>>(),
                );
                Ok((loss.total, parts))
            })?;
            let grad_norm = match cfg.clip_norm {
                Some(c) => grads.clip_global_norm(c),
                None => grads.global_norm(),
            };
            log::debug!(
                "stage={} epoch={epoch} step={step} loss_s={:.6} loss_m={:.6} loss_r={:.6} grad_norm={grad_norm:.6e}",
                model.stage.as_str(),
                parts.0,
                parts.1,
                parts.2,
            );
            sgd_step(&mut model.params, &grads, &mut opt, lr)?;
            ls += parts.0;
            lm += parts.1;
            lr_sum += parts.2;
            total += value;
            preds.extend(parts.3);
            targets.extend(batch.iter().map(|(_, s)| *s));
        }
        let k = plan.len().max(1) as f64;
        let entry = EpochLog {
            stage: model.stage,
            epoch,
            lr,
            loss_s: ls / k,
            loss_m: lm / k,
            loss_r: lr_sum / k,
            total: total / k,
            train_srcc: spearman(&preds, &targets).ok(),
        };
        log::info!(
            "stage={} epoch={} lr={:.6} loss_s={:.6} loss_m={:.6} loss_r={:.6} total={:.6} train_srcc={}",
            model.stage.as_str(),
            epoch,
            entry.lr,
            entry.loss_s,
            entry.loss_m,
            entry.loss_r,
            entry.total,
            entry.train_srcc.map_or("nan".into(), |v| format!("{v:.4}"))
        );
        history.push(entry);
        opt.epoch = epoch + 1;
        model.epoch = epoch + 1;
    }
    model.optimizer = Some(opt);
    Ok(history)
}

/// Encoder and head on `L_S + λ_R·L_R`, the list-wise term on `H¹`.
pub fn train_stage1(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = init_model(data, cfg)?;
    model.params.set_frozen_prefix(FLOW_PREFIX, true);
    let spec = spec_for(cfg, Phase::Encoder, cfg.lcr_enabled() && cfg.stage1_lcr);
    let history = run_epochs(&mut model, data, cfg, &spec, cfg.epochs)?;
    model.params.set_frozen_prefix(FLOW_PREFIX, false);
    Ok(TrainOutcome { model, history })
}

/// Flow network and head (and, unless frozen, the encoder) on the full loss,
/// scoring through the flow path.
pub fn train_stage2(data: &Dataset, stage1: &Model, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_data(data)?;
    let expected = ModelDims::new(cfg, data.manifest.d, data.manifest.m).fingerprint();
    if stage1.fingerprint() != expected {
        return Err(Error::FingerprintMismatch {
            expected,
            found: stage1.fingerprint(),
        });
    }
    let mut model = stage1.clone();
    model.stage = Stage::Stage2;
    model.epoch = 0;
    if cfg.reinit_head {
        model.reinit_head(cfg.seed)?;
    }
    model.params.set_frozen_prefix(TETE_PREFIX, cfg.freeze_tete);
    let spec = spec_for(cfg, Phase::Flow, cfg.lcr_enabled());
    let history = run_epochs(&mut model, data, cfg, &spec, cfg.epochs)?;
    model.params.set_frozen_prefix(TETE_PREFIX, false);
    Ok(TrainOutcome { model, history })
}

/// The full loss from scratch for twice the per-stage epochs, so the
/// optimizer takes as many steps as the two-stage schedule.
pub fn train_one_stage(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let mut model = init_model(data, cfg)?;
    model.stage = Stage::Stage2;
    let spec = spec_for(cfg, Phase::Flow, cfg.lcr_enabled());
    let history = run_epochs(&mut model, data, cfg, &spec, 2 * cfg.epochs)?;
    Ok(TrainOutcome { model, history })
}

/// Dispatches on strategy and the `no_gmf` ablation.
pub fn train(data: &Dataset, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    if cfg.no_gmf {
        return train_stage1(data, cfg);
    }
    match cfg.strategy {
        Strategy::TwoStage => {
            let s1 = train_stage1(data, cfg)?;
            let mut s2 = train_stage2(data, &s1.model, cfg)?;
            let mut history = s1.history;
            history.append(&mut s2.history);
            Ok(TrainOutcome {
                model: s2.model,
                history,
            })
        }
        Strategy::OneStage => train_one_stage(data, cfg),
    }
}

/// Scores every test video through the model's inference path.
pub fn predict_all(model: &Model, data: &Dataset) -> Result<Vec<f64>> {
    data.samples.iter().map(|s| model.predict(&s.features)).collect()
}

/// SRCC and R-ℓ2 on `test`, with R-ℓ2 normalized by the test split's bounds.
pub fn evaluate(model: &Model, test: &Dataset) -> Result<EvalReport> {
    check_data(test)?;
    if test.manifest.d != model.dims.d {
        return Err(Error::shape(
            "evaluate",
            format!("test features are {} wide, model expects {}", test.manifest.d, model.dims.d),
        ));
    }
    let preds = predict_all(model, test)?;
    EvalReport::single(
        "synthetic",
        &preds,
        &test.scores(),
        test.manifest.score_max,
        test.manifest.score_min,
    )
}

/// Mean fraction of order-preserving clip matches between consecutive test
/// videos' refined features, over the first `limit` videos. A diagnostic only.
pub fn ordering_diagnostic(model: &Model, test: &Dataset, limit: usize) -> Result<f64> {
    let k = test.samples.len().min(limit);
    if k < 2 {
        return Err(Error::EmptyDataset);
    }
    let refined = test.samples[..k]
        .iter()
        .map(|s| model.refine(&s.features))
        .collect::<Result<Vec<_>>>()?;
    let total: f64 = refined
        .windows(2)
        .map(|w| ordering_consistency(&w[0], &w[1]))
        .sum::<Result<f64>>()?;
    Ok(total / (k - 1) as f64)
}
