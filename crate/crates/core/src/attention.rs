//! Self-attention over clip sequences and the temporally-enhanced encoder.
//!
//! Two attention variants share the same Q/K/V embeddings:
//!
//! * vanilla: `softmax(QKᵀ/√d_k)·V`, quadratic in the clip count `M`;
//! * TESA: a learned `d_t×d_k` prototype matrix `T` routes every clip
//!   through `d_t` prototypes. `T_q = softmax(QTᵀ)` and `T_k = softmax(KTᵀ)`
//!   are row softmaxes over prototypes; each prototype then pools the values
//!   with `T_v = softmax_rows(T_kᵀ)·V` (softmax over clips), and the output is
//!   `T_q·T_v`. The core cost is linear in `M`.
//!
//! The encoder is a single pre-norm transformer block built on either
//! variant, with a learned positional table.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::diffcore::{rng, Matrix, ParamStore, ParamVars, Tape, Var, LAYER_NORM_EPS};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionMode {
    Vanilla,
    Tesa,
}

impl AttentionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            AttentionMode::Vanilla => "vanilla",
            AttentionMode::Tesa => "tesa",
        }
    }
}

/// Embedding weights for one attention layer.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    /// Prototype matrix, `d_t×d_k`. Present iff `mode` is [`AttentionMode::Tesa`].
    pub t: Option<Matrix>,
    pub mode: AttentionMode,
}

impl AttentionParams {
    pub fn d_model(&self) -> usize {
        self.w_q.rows()
    }

    pub fn d_k(&self) -> usize {
        self.w_q.cols()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.w_q.rows();
        let d_k = self.w_q.cols();
        if self.w_k.shape() != (d, d_k) {
            return Err(Error::shape("attention", format!("w_k is {:?}, expected {:?}", self.w_k.shape(), (d, d_k))));
        }
        if self.w_v.shape() != (d, d) {
            return Err(Error::shape("attention", format!("w_v is {:?}, expected {:?}", self.w_v.shape(), (d, d))));
        }
        if d_k > d {
            return Err(Error::shape("attention", format!("d_k = {d_k} exceeds D = {d}")));
        }
        match (self.mode, &self.t) {
            (AttentionMode::Vanilla, None) => Ok(()),
            (AttentionMode::Tesa, Some(t)) => {
                if t.cols() != d_k || t.rows() >= d_k {
                    Err(Error::shape(
                        "attention",
                        format!("prototype matrix is {:?}; need d_t x {d_k} with d_t < {d_k}", t.shape()),
                    ))
                } else {
                    Ok(())
                }
            }
            (AttentionMode::Vanilla, Some(_)) => Err(Error::shape("attention", "vanilla mode carries a prototype matrix")),
            (AttentionMode::Tesa, None) => Err(Error::shape("attention", "tesa mode needs a prototype matrix")),
        }
    }
}

/// `softmax(QKᵀ/√d_k)·V` on already-embedded queries, keys and values.
pub fn vanilla_core_on(tape: &mut Tape, q: Var, k: Var, v: Var) -> Var {
    let d_k = tape.value(q).cols() as f64;
    let scores = tape.matmul_t(q, k);
    let scores = tape.scale(scores, 1.0 / d_k.sqrt());
    let weights = tape.softmax_rows(scores);
    tape.matmul(weights, v)
}

/// Prototype-routed attention core on embedded Q, K, V and prototypes `t`.
pub fn tesa_core_on(tape: &mut Tape, q: Var, k: Var, v: Var, t: Var) -> Var {
    let q_logits = tape.matmul_t(q, t);
    let t_q = tape.softmax_rows(q_logits);
    let k_logits = tape.matmul_t(k, t);
    let t_k = tape.softmax_rows(k_logits);
    let t_k_t = tape.transpose(t_k);
    let pool = tape.softmax_rows(t_k_t);
    let t_v = tape.matmul(pool, v);
    tape.matmul(t_q, t_v)
}

/// Attention over `h` with the given embedding weights; `t` selects TESA.
pub fn attention_on(tape: &mut Tape, h: Var, w_q: Var, w_k: Var, w_v: Var, t: Option<Var>) -> Var {
    let q = tape.matmul(h, w_q);
    let k = tape.matmul(h, w_k);
    let v = tape.matmul(h, w_v);
    match t {
        Some(t) => tesa_core_on(tape, q, k, v, t),
        None => vanilla_core_on(tape, q, k, v),
    }
}

fn check_input(h: &Matrix, p: &AttentionParams) -> Result<()> {
    p.validate()?;
    if h.cols() != p.d_model() {
        return Err(Error::shape(
            "attention",
            format!("input has {} columns, weights expect {}", h.cols(), p.d_model()),
        ));
    }
    Ok(())
}

fn run_attention(h: &Matrix, p: &AttentionParams) -> Matrix {
    let mut tape = Tape::new();
    let hv = tape.constant(h.clone());
    let w_q = tape.constant(p.w_q.clone());
    let w_k = tape.constant(p.w_k.clone());
    let w_v = tape.constant(p.w_v.clone());
    let t = p.t.as_ref().map(|t| tape.constant(t.clone()));
    let out = attention_on(&mut tape, hv, w_q, w_k, w_v, t);
    tape.value(out).clone()
}

/// Vanilla scaled dot-product self-attention of an `M×D` clip sequence.
pub fn vanilla_attention(h: &Matrix, p: &AttentionParams) -> Result<Matrix> {
    if p.mode != AttentionMode::Vanilla {
        return Err(Error::InvalidArgument("vanilla_attention called with tesa parameters".into()));
    }
    check_input(h, p)?;
    Ok(run_attention(h, p))
}

/// Temporally-enhanced (prototype) self-attention of an `M×D` clip sequence.
pub fn tesa_attention(h: &Matrix, p: &AttentionParams) -> Result<Matrix> {
    if p.mode != AttentionMode::Tesa {
        return Err(Error::InvalidArgument("tesa_attention called with vanilla parameters".into()));
    }
    check_input(h, p)?;
    Ok(run_attention(h, p))
}

/// Multiply-accumulate count of the attention core only (after embeddings).
pub fn core_mac_count(mode: AttentionMode, m: u64, d: u64, d_k: u64, d_t: u64) -> u64 {
    match mode {
        AttentionMode::Vanilla => m * m * d_k + m * m * d,
        AttentionMode::Tesa => 2 * m * d_k * d_t + m * d_t * d + m * d_t * d,
    }
}

/// Multiply-accumulate count of one attention layer: Q/K/V embeddings plus core.
pub fn mac_count(mode: AttentionMode, m: u64, d: u64, d_k: u64, d_t: u64) -> u64 {
    let embeddings = m * d * d_k * 2 + m * d * d;
    embeddings + core_mac_count(mode, m, d, d_k, d_t)
}

/// Hyperparameters fixing the encoder's parameter shapes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EncoderShape {
    pub d_model: usize,
    pub d_k: usize,
    pub d_t: usize,
    pub d_ff: usize,
    pub m_max: usize,
    pub mode: AttentionMode,
    pub use_positions: bool,
    pub dropout: f64,
}

impl EncoderShape {
    pub fn new(d_model: usize, d_k: usize, d_t: usize, m_max: usize, mode: AttentionMode) -> Self {
        Self {
            d_model,
            d_k,
            d_t,
            d_ff: 2 * d_model,
            m_max,
            mode,
            use_positions: true,
            dropout: 0.3,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_k == 0 || self.m_max == 0 || self.d_ff == 0 {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.d_k > self.d_model {
            return Err(Error::Config(format!("d_k = {} exceeds D = {}", self.d_k, self.d_model)));
        }
        if self.mode == AttentionMode::Tesa && !(0 < self.d_t && self.d_t < self.d_k) {
            return Err(Error::Config(format!("need 0 < d_t < d_k, got d_t = {}, d_k = {}", self.d_t, self.d_k)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        Ok(())
    }
}

/// Parameter names of an encoder registered under `prefix`.
#[derive(Clone, Debug)]
pub struct EncoderNames {
    pub positions: String,
    pub w_q: String,
    pub w_k: String,
    pub w_v: String,
    pub t: String,
    pub ln1_gain: String,
    pub ln1_bias: String,
    pub ln2_gain: String,
    pub ln2_bias: String,
    pub ff_w1: String,
    pub ff_b1: String,
    pub ff_w2: String,
    pub ff_b2: String,
}

impl EncoderNames {
    pub fn new(prefix: &str) -> Self {
        let n = |s: &str| format!("{prefix}{s}");
        Self {
            positions: n("positions"),
            w_q: n("attn.w_q"),
            w_k: n("attn.w_k"),
            w_v: n("attn.w_v"),
            t: n("attn.t"),
            ln1_gain: n("ln1.gain"),
            ln1_bias: n("ln1.bias"),
            ln2_gain: n("ln2.gain"),
            ln2_bias: n("ln2.bias"),
            ff_w1: n("ff.w1"),
            ff_b1: n("ff.b1"),
            ff_w2: n("ff.w2"),
            ff_b2: n("ff.b2"),
        }
    }
}

/// Xavier-uniform initialisation.
pub(crate) fn xavier(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-a..a))
}

/// Encoder weights as plain matrices.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub shape: EncoderShape,
    pub attention: AttentionParams,
    pub positions: Matrix,
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub ff_w1: Matrix,
    pub ff_b1: Matrix,
    pub ff_w2: Matrix,
    pub ff_b2: Matrix,
}

impl EncoderParams {
    pub fn init(shape: EncoderShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut r = rng::stream(rng::derive(seed, &[rng::tag("encoder-init")]));
        let d = shape.d_model;
        let t = match shape.mode {
            AttentionMode::Tesa => Some(xavier(shape.d_t, shape.d_k, &mut r)),
            AttentionMode::Vanilla => None,
        };
        let attention = AttentionParams {
            w_q: xavier(d, shape.d_k, &mut r),
            w_k: xavier(d, shape.d_k, &mut r),
            w_v: xavier(d, d, &mut r),
            t,
            mode: shape.mode,
        };
        let positions = Matrix::from_fn(shape.m_max, d, |_, _| {
            let z: f64 = StandardNormal.sample(&mut r);
            0.02 * z
        });
        Ok(Self {
            shape,
            attention,
            positions,
            ln1_gain: Matrix::filled(1, d, 1.0),
            ln1_bias: Matrix::zeros(1, d),
            ln2_gain: Matrix::filled(1, d, 1.0),
            ln2_bias: Matrix::zeros(1, d),
            ff_w1: xavier(d, shape.d_ff, &mut r),
            ff_b1: Matrix::zeros(1, shape.d_ff),
            ff_w2: xavier(shape.d_ff, d, &mut r),
            ff_b2: Matrix::zeros(1, d),
        })
    }

    /// Registers every weight in `store` under `prefix`.
    pub fn insert_into(&self, store: &mut ParamStore, prefix: &str) -> Result<()> {
        let n = EncoderNames::new(prefix);
        store.insert(n.positions, self.positions.clone(), true)?;
        store.insert(n.w_q, self.attention.w_q.clone(), true)?;
        store.insert(n.w_k, self.attention.w_k.clone(), true)?;
        store.insert(n.w_v, self.attention.w_v.clone(), true)?;
        if let Some(t) = &self.attention.t {
            store.insert(n.t, t.clone(), true)?;
        }
        store.insert(n.ln1_gain, self.ln1_gain.clone(), false)?;
        store.insert(n.ln1_bias, self.ln1_bias.clone(), false)?;
        store.insert(n.ln2_gain, self.ln2_gain.clone(), false)?;
        store.insert(n.ln2_bias, self.ln2_bias.clone(), false)?;
        store.insert(n.ff_w1, self.ff_w1.clone(), true)?;
        store.insert(n.ff_b1, self.ff_b1.clone(), false)?;
        store.insert(n.ff_w2, self.ff_w2.clone(), true)?;
        store.insert(n.ff_b2, self.ff_b2.clone(), false)?;
        Ok(())
    }

    /// Reads the weights back out of `store`.
    pub fn from_store(store: &ParamStore, prefix: &str, shape: EncoderShape) -> Result<Self> {
        let n = EncoderNames::new(prefix);
        let get = |name: &str| {
            store
                .get(name)
                .cloned()
                .ok_or_else(|| Error::InvalidArgument(format!("missing parameter {name}")))
        };
        let t = match shape.mode {
            AttentionMode::Tesa => Some(get(&n.t)?),
            AttentionMode::Vanilla => None,
        };
        let p = Self {
            shape,
            attention: AttentionParams {
                w_q: get(&n.w_q)?,
                w_k: get(&n.w_k)?,
                w_v: get(&n.w_v)?,
                t,
                mode: shape.mode,
            },
            positions: get(&n.positions)?,
            ln1_gain: get(&n.ln1_gain)?,
            ln1_bias: get(&n.ln1_bias)?,
            ln2_gain: get(&n.ln2_gain)?,
            ln2_bias: get(&n.ln2_bias)?,
            ff_w1: get(&n.ff_w1)?,
            ff_b1: get(&n.ff_b1)?,
            ff_w2: get(&n.ff_w2)?,
            ff_b2: get(&n.ff_b2)?,
        };
        p.attention.validate()?;
        Ok(p)
    }

    fn bind_constant(&self, tape: &mut Tape) -> EncoderVars {
        let mut c = |m: &Matrix| tape.constant(m.clone());
        EncoderVars {
            positions: c(&self.positions),
            w_q: c(&self.attention.w_q),
            w_k: c(&self.attention.w_k),
            w_v: c(&self.attention.w_v),
            t: self.attention.t.as_ref().map(&mut c),
            ln1_gain: c(&self.ln1_gain),
            ln1_bias: c(&self.ln1_bias),
            ln2_gain: c(&self.ln2_gain),
            ln2_bias: c(&self.ln2_bias),
            ff_w1: c(&self.ff_w1),
            ff_b1: c(&self.ff_b1),
            ff_w2: c(&self.ff_w2),
            ff_b2: c(&self.ff_b2),
        }
    }
}

/// Encoder weights bound to a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub positions: Var,
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub t: Option<Var>,
    pub ln1_gain: Var,
    pub ln1_bias: Var,
    pub ln2_gain: Var,
    pub ln2_bias: Var,
    pub ff_w1: Var,
    pub ff_b1: Var,
    pub ff_w2: Var,
    pub ff_b2: Var,
}

impl EncoderVars {
    pub fn from_params(vars: &ParamVars, prefix: &str, mode: AttentionMode) -> Self {
        let n = EncoderNames::new(prefix);
        Self {
            positions: vars.get(&n.positions),
            w_q: vars.get(&n.w_q),
            w_k: vars.get(&n.w_k),
            w_v: vars.get(&n.w_v),
            t: match mode {
                AttentionMode::Tesa => Some(vars.get(&n.t)),
                AttentionMode::Vanilla => None,
            },
            ln1_gain: vars.get(&n.ln1_gain),
            ln1_bias: vars.get(&n.ln1_bias),
            ln2_gain: vars.get(&n.ln2_gain),
            ln2_bias: vars.get(&n.ln2_bias),
            ff_w1: vars.get(&n.ff_w1),
            ff_b1: vars.get(&n.ff_b1),
            ff_w2: vars.get(&n.ff_w2),
            ff_b2: vars.get(&n.ff_b2),
        }
    }
}

fn maybe_dropout(tape: &mut Tape, x: Var, rate: f64, seed: u64, training: bool) -> Var {
    if !training || rate == 0.0 {
        return x;
    }
    let (r, c) = tape.value(x).shape();
    let mask = crate::diffcore::dropout_mask(r, c, rate, seed);
    tape.mul_const(x, mask)
}

/// One pre-norm encoder block on the tape:
/// `X = H⁰ + P[0..M]`, `X += drop(attn(LN₁(X)))`, `X += drop(FFN(LN₂(X)))`.
pub fn tete_encode_on(
    tape: &mut Tape,
    h0: Var,
    vars: &EncoderVars,
    shape: &EncoderShape,
    training: bool,
    seed: u64,
) -> Result<Var> {
    let (m, d) = tape.value(h0).shape();
    if m > shape.m_max {
        return Err(Error::SequenceTooLong { m, m_max: shape.m_max });
    }
    if d != shape.d_model {
        return Err(Error::shape("tete_encode", format!("input width {d}, encoder width {}", shape.d_model)));
    }
    let mut x = h0;
    if shape.use_positions {
        let pos = tape.slice_rows(vars.positions, 0, m);
        x = tape.add(x, pos);
    }

    let a = tape.layer_norm(x, vars.ln1_gain, vars.ln1_bias, LAYER_NORM_EPS);
    let att = attention_on(tape, a, vars.w_q, vars.w_k, vars.w_v, vars.t);
    let att = maybe_dropout(tape, att, shape.dropout, rng::derive(seed, &[rng::tag("attn-drop")]), training);
    x = tape.add(x, att);

    let f = tape.layer_norm(x, vars.ln2_gain, vars.ln2_bias, LAYER_NORM_EPS);
    let hidden = tape.matmul(f, vars.ff_w1);
    let hidden = tape.add_row(hidden, vars.ff_b1);
    let hidden = tape.relu(hidden);
    let ff = tape.matmul(hidden, vars.ff_w2);
    let ff = tape.add_row(ff, vars.ff_b2);
    let ff = maybe_dropout(tape, ff, shape.dropout, rng::derive(seed, &[rng::tag("ff-drop")]), training);
    Ok(tape.add(x, ff))
}

/// Estimates the desired feature `H¹` from the initial clip features `H⁰`.
pub fn tete_encode(h0: &Matrix, p: &EncoderParams, training: bool, seed: u64) -> Result<Matrix> {
    p.attention.validate()?;
    let mut tape = Tape::new();
    let vars = p.bind_constant(&mut tape);
    let hv = tape.constant(h0.clone());
    let out = tete_encode_on(&mut tape, hv, &vars, &p.shape, training, seed)?;
    tape.check_finite()?;
    Ok(tape.value(out).clone())
}
