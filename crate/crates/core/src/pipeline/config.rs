use std::fmt::Write as _;
use std::str::FromStr;

use crate::attention::AttentionMode;
use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::lcr::{Alignment, LcrOptions, RowNormalization};

/// Smallest batch for which the list-wise term is used.
pub const MIN_LCR_BATCH: usize = 4;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Strategy {
    #[default]
    TwoStage,
    OneStage,
}

impl Strategy {
    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::TwoStage => "two-stage",
            Strategy::OneStage => "one-stage",
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "two-stage" | "two_stage" => Ok(Strategy::TwoStage),
            "one-stage" | "one_stage" => Ok(Strategy::OneStage),
            other => Err(Error::Config(format!("unknown strategy {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub batch: usize,
    /// Epochs per stage. One-stage training runs twice this many.
    pub epochs: usize,
    pub lr_max: f64,
    pub lr_min: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub dropout: f64,
    pub lambda_m: f64,
    pub lambda_r: f64,
    pub steps: usize,
    pub d_k: usize,
    pub d_t: usize,
    /// Flow hidden width; `None` means `D`, or `D/2` with `half`.
    pub flow_hidden: Option<usize>,
    /// Positional table length; `None` means the training split's `M`.
    pub m_max: Option<usize>,
    pub no_gmf: bool,
    pub no_tesa: bool,
    pub no_lcr: bool,
    pub no_kl: bool,
    pub half: bool,
    pub strategy: Strategy,
    pub freeze_tete: bool,
    pub use_positions: bool,
    pub stage1_lcr: bool,
    pub reinit_head: bool,
    /// Let score-head gradients reach φ through the final flow state.
    pub score_into_flow: bool,
    pub teacher_forcing: bool,
    pub lcr_normalization: RowNormalization,
    pub mean_score_loss: bool,
    /// Rescale each batch gradient to at most this global norm.
    pub clip_norm: Option<f64>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch: 32,
            epochs: 200,
            lr_max: 0.01,
            lr_min: 0.0001,
            momentum: 0.9,
            weight_decay: 0.01,
            dropout: 0.3,
            lambda_m: 0.5,
            lambda_r: 0.01,
            steps: 4,
            d_k: 128,
            d_t: 32,
            flow_hidden: None,
            m_max: None,
            no_gmf: false,
            no_tesa: false,
            no_lcr: false,
            no_kl: false,
            half: false,
            strategy: Strategy::TwoStage,
            freeze_tete: false,
            use_positions: true,
            stage1_lcr: true,
            reinit_head: false,
            score_into_flow: true,
            teacher_forcing: false,
            lcr_normalization: RowNormalization::Softmax,
            mean_score_loss: false,
            clip_norm: Some(10.0),
            seed: 7,
        }
    }
}

fn flag(v: bool) -> &'static str {
    if v {
        "true"
    } else {
        "false"
    }
}

impl TrainConfig {
    /// Small dimensions used by the desk-scale benchmark.
    pub fn ci() -> Self {
        Self {
            batch: 8,
            epochs: 60,
            d_k: 16,
            d_t: 4,
            ..Self::default()
        }
    }

    pub fn attention_mode(&self) -> AttentionMode {
        if self.no_tesa {
            AttentionMode::Vanilla
        } else {
            AttentionMode::Tesa
        }
    }

    pub fn lcr_enabled(&self) -> bool {
        !self.no_lcr
    }

    pub fn lcr_options(&self) -> LcrOptions {
        LcrOptions {
            normalization: self.lcr_normalization,
            alignment: if self.no_kl {
                Alignment::MeanSquared
            } else {
                Alignment::SymmetricKl
            },
        }
    }

    pub fn flow_hidden_for(&self, d: usize) -> usize {
        self.flow_hidden.unwrap_or(if self.half { (d / 2).max(1) } else { d })
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch == 0 {
            return bad("batch size must be positive".into());
        }
        if self.lcr_enabled() && self.batch < MIN_LCR_BATCH {
            return bad(format!(
                "batch size {} is below {MIN_LCR_BATCH}, the minimum for the list-wise term (disable it with no_lcr)",
                self.batch
            ));
        }
        if !(self.lr_max >= self.lr_min && self.lr_min > 0.0 && self.lr_max.is_finite()) {
            return bad(format!("need lr_max >= lr_min > 0, got {} and {}", self.lr_max, self.lr_min));
        }
        if !(0.0..1.0).contains(&self.momentum) || !(self.weight_decay >= 0.0) {
            return bad("momentum must lie in [0, 1) and weight decay be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout must lie in [0, 1), got {}", self.dropout));
        }
        if !(self.lambda_m >= 0.0 && self.lambda_r >= 0.0) {
            return bad("loss weights must be non-negative".into());
        }
        if self.steps == 0 {
            return bad("flow needs at least one step".into());
        }
        if self.d_k == 0 || self.d_t == 0 {
            return bad("d_k and d_t must be positive".into());
        }
        if !self.no_tesa && !(0 < self.d_t && self.d_t < self.d_k) {
            return bad(format!("need 0 < d_t < d_k, got d_t={} d_k={}", self.d_t, self.d_k));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0 && c.is_finite())) {
            return bad("clip_norm must be positive and finite when set".into());
        }
        if self.flow_hidden == Some(0) || self.m_max == Some(0) {
            return bad("flow_hidden and m_max must be positive when set".into());
        }
        Ok(())
    }

    /// Applies every key in `kv` on top of `self`. Unknown keys are rejected.
    pub fn apply(&mut self, kv: &KeyValues) -> Result<()> {
        const W: &str = "train config";
        for key in kv.keys() {
            match key {
                "batch" => self.batch = kv.require(key, W)?,
                "epochs" => self.epochs = kv.require(key, W)?,
                "lr_max" => self.lr_max = kv.require(key, W)?,
                "lr_min" => self.lr_min = kv.require(key, W)?,
                "momentum" => self.momentum = kv.require(key, W)?,
                "weight_decay" => self.weight_decay = kv.require(key, W)?,
                "dropout" => self.dropout = kv.require(key, W)?,
                "lambda_m" => self.lambda_m = kv.require(key, W)?,
                "lambda_r" => self.lambda_r = kv.require(key, W)?,
                "steps" => self.steps = kv.require(key, W)?,
                "d_k" => self.d_k = kv.require(key, W)?,
                "d_t" => self.d_t = kv.require(key, W)?,
                "flow_hidden" => self.flow_hidden = optional_usize(kv, key)?,
                "m_max" => self.m_max = optional_usize(kv, key)?,
                "no_gmf" => self.no_gmf = kv.require(key, W)?,
                "no_tesa" => self.no_tesa = kv.require(key, W)?,
                "no_lcr" => self.no_lcr = kv.require(key, W)?,
                "no_kl" => self.no_kl = kv.require(key, W)?,
                "half" => self.half = kv.require(key, W)?,
                "strategy" => self.strategy = kv.get(key).unwrap_or_default().parse()?,
                "freeze_tete" => self.freeze_tete = kv.require(key, W)?,
                "use_positions" => self.use_positions = kv.require(key, W)?,
                "stage1_lcr" => self.stage1_lcr = kv.require(key, W)?,
                "reinit_head" => self.reinit_head = kv.require(key, W)?,
                "score_into_flow" => self.score_into_flow = kv.require(key, W)?,
                "teacher_forcing" => self.teacher_forcing = kv.require(key, W)?,
                "lcr_normalization" => self.lcr_normalization = kv.get(key).unwrap_or_default().parse()?,
                "mean_score_loss" => self.mean_score_loss = kv.require(key, W)?,
                "clip_norm" => {
                    self.clip_norm = match kv.get(key) {
                        Some("none") => None,
                        _ => Some(kv.require(key, W)?),
                    }
                }
                "seed" => self.seed = kv.require(key, W)?,
                other => return Err(Error::Config(format!("unknown config key {other:?}"))),
            }
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        cfg.apply(&KeyValues::parse(text, "train config")?)?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut o = String::new();
        let _ = writeln!(o, "batch={}", self.batch);
        let _ = writeln!(o, "epochs={}", self.epochs);
        let _ = writeln!(o, "lr_max={}", self.lr_max);
        let _ = writeln!(o, "lr_min={}", self.lr_min);
        let _ = writeln!(o, "momentum={}", self.momentum);
        let _ = writeln!(o, "weight_decay={}", self.weight_decay);
        let _ = writeln!(o, "dropout={}", self.dropout);
        let _ = writeln!(o, "lambda_m={}", self.lambda_m);
        let _ = writeln!(o, "lambda_r={}", self.lambda_r);
        let _ = writeln!(o, "steps={}", self.steps);
        let _ = writeln!(o, "d_k={}", self.d_k);
        let _ = writeln!(o, "d_t={}", self.d_t);
        let _ = writeln!(o, "flow_hidden={}", self.flow_hidden.map_or("auto".into(), |v| v.to_string()));
        let _ = writeln!(o, "m_max={}", self.m_max.map_or("auto".into(), |v| v.to_string()));
        let _ = writeln!(o, "no_gmf={}", flag(self.no_gmf));
        let _ = writeln!(o, "no_tesa={}", flag(self.no_tesa));
        let _ = writeln!(o, "no_lcr={}", flag(self.no_lcr));
        let _ = writeln!(o, "no_kl={}", flag(self.no_kl));
        let _ = writeln!(o, "half={}", flag(self.half));
        let _ = writeln!(o, "strategy={}", self.strategy.as_str());
        let _ = writeln!(o, "freeze_tete={}", flag(self.freeze_tete));
        let _ = writeln!(o, "use_positions={}", flag(self.use_positions));
        let _ = writeln!(o, "stage1_lcr={}", flag(self.stage1_lcr));
        let _ = writeln!(o, "reinit_head={}", flag(self.reinit_head));
        let _ = writeln!(o, "score_into_flow={}", flag(self.score_into_flow));
        let _ = writeln!(o, "teacher_forcing={}", flag(self.teacher_forcing));
        let _ = writeln!(o, "lcr_normalization={}", self.lcr_normalization.as_str());
        let _ = writeln!(o, "mean_score_loss={}", flag(self.mean_score_loss));
        let _ = writeln!(o, "clip_norm={}", self.clip_norm.map_or("none".into(), |v| v.to_string()));
        let _ = writeln!(o, "seed={}", self.seed);
        o
    }
}

fn optional_usize(kv: &KeyValues, key: &str) -> Result<Option<usize>> {
    match kv.get(key) {
        Some("auto") | Some("") | None => Ok(None),
        Some(_) => kv.require(key, "train config").map(Some),
    }
}

/// Everything that fixes the parameter layout of a model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub d: usize,
    pub m_max: usize,
    pub d_k: usize,
    pub d_t: usize,
    pub flow_hidden: usize,
    pub steps: usize,
    pub mode: AttentionMode,
    pub use_positions: bool,
}

impl ModelDims {
    pub fn new(cfg: &TrainConfig, d: usize, m: usize) -> Self {
        Self {
            d,
            m_max: cfg.m_max.unwrap_or(m),
            d_k: cfg.d_k,
            d_t: cfg.d_t,
            flow_hidden: cfg.flow_hidden_for(d),
            steps: cfg.steps,
            mode: cfg.attention_mode(),
            use_positions: cfg.use_positions,
        }
    }

    /// FNV-1a over the layout fields.
    pub fn fingerprint(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for &b in bytes {
                h = (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for v in [self.d, self.m_max, self.d_k, self.d_t, self.flow_hidden, self.steps] {
            eat(&(v as u64).to_le_bytes());
        }
        eat(self.mode.as_str().as_bytes());
        eat(&[self.use_positions as u8]);
        h
    }

    pub(crate) fn to_values(self) -> Vec<f64> {
        vec![
            self.d as f64,
            self.m_max as f64,
            self.d_k as f64,
            self.d_t as f64,
            self.flow_hidden as f64,
            self.steps as f64,
            match self.mode {
                AttentionMode::Vanilla => 0.0,
                AttentionMode::Tesa => 1.0,
            },
            self.use_positions as u8 as f64,
        ]
    }

    pub(crate) fn from_values(v: &[f64]) -> Result<Self> {
        let malformed = || Error::Malformed {
            what: "checkpoint",
            detail: "bad model dimensions entry".into(),
        };
        if v.len() != 8 || v.iter().any(|x| !(x.fract() == 0.0 && *x >= 0.0 && *x < 1e9)) {
            return Err(malformed());
        }
        if v[..6].contains(&0.0) {
            return Err(malformed());
        }
        let u = |i: usize| v[i] as usize;
        Ok(Self {
            d: u(0),
            m_max: u(1),
            d_k: u(2),
            d_t: u(3),
            flow_hidden: u(4),
            steps: u(5),
            mode: match u(6) {
                0 => AttentionMode::Vanilla,
                1 => AttentionMode::Tesa,
                _ => return Err(malformed()),
            },
            use_positions: match u(7) {
                0 => false,
                1 => true,
                _ => return Err(malformed()),
            },
        })
    }
}
