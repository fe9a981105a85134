//! Small pre-norm transformer encoder with exact operation counters.

use std::rc::Rc;

use crate::corpus::{TokenSequence, PAD_ID};
use crate::numkernel::{
    bind_params, sample_normal, KernelError, Parameters, RngState, Tape, Tensor, Var,
};

type Result<T> = std::result::Result<T, KernelError>;

pub const DROPOUT: f64 = 0.1;
const INIT_STD: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    /// Token ids `[0, vocab_size)`, reserved ids included.
    pub vocab_size: usize,
    /// Number of learned positions; longest accepted input.
    pub max_len: usize,
    pub hidden: usize,
    pub layers: usize,
    pub heads: usize,
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.hidden == 0 || self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return Err(KernelError::Contract(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        if self.layers == 0 || self.max_len == 0 || self.vocab_size == 0 {
            return Err(KernelError::Contract("encoder sizes must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_g: Tensor,
    pub ln1_b: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    /// No key bias: it shifts every score in a row equally, which the
    /// softmax cancels.
    pub wk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_g: Tensor,
    pub ln2_b: Tensor,
    pub ff1_w: Tensor,
    pub ff1_b: Tensor,
    pub ff2_w: Tensor,
    pub ff2_b: Tensor,
}

const LAYER_TENSORS: [&str; 15] = [
    "ln1.g", "ln1.b", "wq", "bq", "wk", "wv", "bv", "wo", "bo", "ln2.g", "ln2.b", "ff1.w",
    "ff1.b", "ff2.w", "ff2.b",
];

impl LayerParams {
    fn new(h: usize, rng: &mut RngState) -> Self {
        let mut w = |i: usize, o: usize| sample_normal(rng, &[i, o], INIT_STD);
        Self {
            ln1_g: Tensor::ones(&[h]),
            ln1_b: Tensor::zeros(&[h]),
            wq: w(h, h),
            bq: Tensor::zeros(&[h]),
            wk: w(h, h),
            wv: w(h, h),
            bv: Tensor::zeros(&[h]),
            wo: w(h, h),
            bo: Tensor::zeros(&[h]),
            ln2_g: Tensor::ones(&[h]),
            ln2_b: Tensor::zeros(&[h]),
            ff1_w: w(h, 4 * h),
            ff1_b: Tensor::zeros(&[4 * h]),
            ff2_w: w(4 * h, h),
            ff2_b: Tensor::zeros(&[h]),
        }
    }

    fn all(&self) -> [&Tensor; 15] {
        [
            &self.ln1_g, &self.ln1_b, &self.wq, &self.bq, &self.wk, &self.wv, &self.bv,
            &self.wo, &self.bo, &self.ln2_g, &self.ln2_b, &self.ff1_w, &self.ff1_b, &self.ff2_w,
            &self.ff2_b,
        ]
    }

    fn all_mut(&mut self) -> [&mut Tensor; 15] {
        [
            &mut self.ln1_g,
            &mut self.ln1_b,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_g,
            &mut self.ln2_b,
            &mut self.ff1_w,
            &mut self.ff1_b,
            &mut self.ff2_w,
            &mut self.ff2_b,
        ]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    pub heads: usize,
    pub tok_emb: Tensor,
    pub pos_emb: Tensor,
    pub layers: Vec<LayerParams>,
    pub lnf_g: Tensor,
    pub lnf_b: Tensor,
}

impl EncoderParams {
    /// Normal(0, 0.02) weights, zero biases, unit layer-norm gains.
    pub fn init(cfg: EncoderConfig, rng: &mut RngState) -> Result<Self> {
        cfg.validate()?;
        let h = cfg.hidden;
        let tok_emb = sample_normal(rng, &[cfg.vocab_size, h], INIT_STD);
        let pos_emb = sample_normal(rng, &[cfg.max_len, h], INIT_STD);
        let layers = (0..cfg.layers).map(|_| LayerParams::new(h, rng)).collect();
        Ok(Self {
            heads: cfg.heads,
            tok_emb,
            pos_emb,
            layers,
            lnf_g: Tensor::ones(&[h]),
            lnf_b: Tensor::zeros(&[h]),
        })
    }

    pub fn config(&self) -> EncoderConfig {
        EncoderConfig {
            vocab_size: self.tok_emb.shape()[0],
            max_len: self.pos_emb.shape()[0],
            hidden: self.tok_emb.shape()[1],
            layers: self.layers.len(),
            heads: self.heads,
        }
    }

    /// Rebuilds from named tensors; the layer count is read from the names.
    pub fn from_named(heads: usize, mut named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut take = |name: &str| {
            let i = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| KernelError::Contract(format!("missing tensor {name}")))?;
            Ok::<_, KernelError>(named.swap_remove(i).1)
        };
        let tok_emb = take("seq.tok_emb")?;
        let pos_emb = take("seq.pos_emb")?;
        let lnf_g = take("seq.ln_f.g")?;
        let lnf_b = take("seq.ln_f.b")?;
        let mut layers = Vec::new();
        while let Ok(first) = take(&format!("seq.layer{}.{}", layers.len(), LAYER_TENSORS[0])) {
            let i = layers.len();
            let mut tensors = vec![first];
            for n in &LAYER_TENSORS[1..] {
                tensors.push(take(&format!("seq.layer{i}.{n}"))?);
            }
            let mut l = LayerParams::new(0, &mut RngState::new(0));
            for (slot, t) in l.all_mut().into_iter().zip(tensors) {
                *slot = t;
            }
            layers.push(l);
        }
        if tok_emb.shape().len() != 2 || layers.is_empty() {
            return Err(KernelError::Contract("malformed encoder tensors".into()));
        }
        let p = Self {
            heads,
            tok_emb,
            pos_emb,
            layers,
            lnf_g,
            lnf_b,
        };
        let cfg = p.config();
        cfg.validate()?;
        let expected = Self::init(cfg, &mut RngState::new(0))?;
        for ((name, got), (_, want)) in p.tensors().into_iter().zip(expected.tensors()) {
            if got.shape() != want.shape() {
                return Err(KernelError::Contract(format!(
                    "{name}: shape {:?}, expected {:?}",
                    got.shape(),
                    want.shape()
                )));
            }
        }
        Ok(p)
    }
}

impl Parameters for EncoderParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("seq.tok_emb".to_string(), &self.tok_emb),
            ("seq.pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (n, t) in LAYER_TENSORS.iter().zip(l.all()) {
                out.push((format!("seq.layer{i}.{n}"), t));
            }
        }
        out.push(("seq.ln_f.g".to_string(), &self.lnf_g));
        out.push(("seq.ln_f.b".to_string(), &self.lnf_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("seq.tok_emb".to_string(), &mut self.tok_emb),
            ("seq.pos_emb".to_string(), &mut self.pos_emb),
        ];
        for (i, l) in self.layers.iter_mut().enumerate() {
            for (n, t) in LAYER_TENSORS.iter().zip(l.all_mut()) {
                out.push((format!("seq.layer{i}.{n}"), t));
            }
        }
        out.push(("seq.ln_f.g".to_string(), &mut self.lnf_g));
        out.push(("seq.ln_f.b".to_string(), &mut self.lnf_b));
        out
    }
}

#[derive(Clone)]
struct LayerVars<'t> {
    v: [Var<'t>; 15],
}

/// [`EncoderParams`] placed on a tape.
#[derive(Clone)]
pub struct EncoderVars<'t> {
    heads: usize,
    tok_emb: Var<'t>,
    pos_emb: Var<'t>,
    layers: Vec<LayerVars<'t>>,
    lnf_g: Var<'t>,
    lnf_b: Var<'t>,
}

impl<'t> EncoderVars<'t> {
    /// From variables in [`Parameters`] order.
    pub fn from_vars(heads: usize, v: &[Var<'t>]) -> Result<Self> {
        if v.len() < 4 || !(v.len() - 4).is_multiple_of(15) {
            return Err(KernelError::Contract(format!("{} encoder tensors", v.len())));
        }
        let n_layers = (v.len() - 4) / 15;
        let layers = (0..n_layers)
            .map(|i| LayerVars {
                v: v[2 + 15 * i..2 + 15 * (i + 1)].try_into().expect("15 tensors"),
            })
            .collect();
        Ok(Self {
            heads,
            tok_emb: v[0],
            pos_emb: v[1],
            layers,
            lnf_g: v[v.len() - 2],
            lnf_b: v[v.len() - 1],
        })
    }

    pub fn bind(tape: &'t Tape, p: &EncoderParams) -> Self {
        Self::from_vars(p.heads, &bind_params(tape, p)).expect("well-formed params")
    }

    pub fn hidden(&self) -> usize {
        self.tok_emb.value().last_dim()
    }
}

/// Operation counts of one forward pass.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpCounts {
    /// Multiply-accumulates of the score (`Q K^T`) and context (`A V`)
    /// products: `n_l * x^2 * H_B`.
    pub attention: u64,
    /// Multiply-accumulates of the projections and feed-forward blocks.
    pub dense: u64,
}

impl std::ops::AddAssign for OpCounts {
    fn add_assign(&mut self, o: Self) {
        self.attention += o.attention;
        self.dense += o.dense;
    }
}

/// Attention operations of one sequence of length `x`.
pub fn attention_ops(x: usize, hidden: usize, layers: usize) -> u64 {
    (layers * x * x * hidden) as u64
}

fn dense_ops(x: usize, hidden: usize, layers: usize) -> u64 {
    (layers * 12 * x * hidden * hidden) as u64
}

pub struct SequenceForward<'t> {
    /// `[x, H_B]` final hidden states (after the closing layer norm).
    pub hidden: Var<'t>,
    /// `[1, H_B]` state at position 0.
    pub cls: Var<'t>,
    /// Attention probabilities, one `[x, x]` matrix per layer and head.
    pub attention: Vec<Var<'t>>,
    pub ops: OpCounts,
}

fn dropout<'t>(x: Var<'t>, rng: Option<&mut RngState>) -> Result<Var<'t>> {
    let Some(rng) = rng else { return Ok(x) };
    let keep = 1.0 - DROPOUT;
    let shape = x.shape();
    let n: usize = shape.iter().product();
    let mask: Vec<f64> = (0..n)
        .map(|_| if rng.next_uniform() < keep { 1.0 / keep } else { 0.0 })
        .collect();
    x.mul(x.tape().constant(Tensor::new(&shape, mask)?))
}

/// Runs the stack over `seq` with attention restricted to positions where
/// `mask` is true. Passing `dropout_rng` enables dropout (training).
pub fn forward_sequence<'t>(
    v: &EncoderVars<'t>,
    seq: &TokenSequence,
    mask: &[bool],
    mut dropout_rng: Option<&mut RngState>,
) -> Result<SequenceForward<'t>> {
    let x = seq.len();
    let max_len = v.pos_emb.value().rows();
    if mask.len() != x {
        return Err(KernelError::Contract(format!(
            "mask length {} differs from sequence length {x}",
            mask.len()
        )));
    }
    if x == 0 || x > max_len {
        return Err(KernelError::Contract(format!(
            "sequence length {x} outside [1, {max_len}]"
        )));
    }
    let h = v.hidden();
    let d = h / v.heads;
    let keep: Rc<[bool]> = mask.into();
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();

    let mut hs = v
        .tok_emb
        .embedding(&seq.ids)?
        .add(v.pos_emb.slice_rows(0, x)?)?;
    hs = dropout(hs, dropout_rng.as_deref_mut())?;
    let mut attention = Vec::with_capacity(v.layers.len() * v.heads);
    for l in &v.layers {
        let [ln1_g, ln1_b, wq, bq, wk, wv, bv, wo, bo, ln2_g, ln2_b, ff1_w, ff1_b, ff2_w, ff2_b] =
            l.v;
        let a = hs.layer_norm(ln1_g, ln1_b)?;
        let q = a.matmul(wq)?.add_bias(bq)?;
        let k = a.matmul(wk)?;
        let val = a.matmul(wv)?.add_bias(bv)?;
        let mut ctx = Vec::with_capacity(v.heads);
        for head in 0..v.heads {
            let qh = q.slice_last(head * d, d)?;
            let kh = k.slice_last(head * d, d)?;
            let vh = val.slice_last(head * d, d)?;
            let probs = qh.matmul_bt(kh)?.scale(inv_sqrt_d).masked_softmax(keep.clone())?;
            attention.push(probs);
            ctx.push(probs.matmul(vh)?);
        }
        let attn_out = Var::concat(&ctx)?.matmul(wo)?.add_bias(bo)?;
        hs = hs.add(dropout(attn_out, dropout_rng.as_deref_mut())?)?;
        let f = hs
            .layer_norm(ln2_g, ln2_b)?
            .matmul(ff1_w)?
            .add_bias(ff1_b)?
            .gelu()
            .matmul(ff2_w)?
            .add_bias(ff2_b)?;
        hs = hs.add(dropout(f, dropout_rng.as_deref_mut())?)?;
    }
    let hidden = hs.layer_norm(v.lnf_g, v.lnf_b)?;
    let cls = hidden.slice_rows(0, 1)?;
    let n_l = v.layers.len();
    Ok(SequenceForward {
        hidden,
        cls,
        attention,
        ops: OpCounts {
            attention: attention_ops(x, h, n_l),
            dense: dense_ops(x, h, n_l),
        },
    })
}

/// Deterministic encoding of one input.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    pub o_cls: Vec<f64>,
    pub ops: OpCounts,
}

pub fn encode_sequence(seq: &TokenSequence, mask: &[bool], params: &EncoderParams) -> Result<EncoderOutput> {
    let tape = Tape::new();
    let v = EncoderVars::bind(&tape, params);
    let f = forward_sequence(&v, seq, mask, None)?;
    Ok(EncoderOutput {
        o_cls: f.cls.value().into_vec(),
        ops: f.ops,
    })
}

/// Mean of the final hidden states over non-pad positions.
pub fn mean_pooled_embedding(seq: &TokenSequence, params: &EncoderParams) -> Result<Vec<f64>> {
    let mask = seq.mask();
    let n = mask.iter().filter(|&&m| m).count();
    if n == 0 {
        return Err(KernelError::Contract("sequence is all padding".into()));
    }
    let tape = Tape::new();
    let v = EncoderVars::bind(&tape, params);
    let hidden = forward_sequence(&v, seq, &mask, None)?.hidden.value();
    let h = hidden.last_dim();
    let mut out = vec![0.0; h];
    for (i, _) in seq.ids.iter().enumerate().filter(|(_, &t)| t != PAD_ID) {
        for (o, x) in out.iter_mut().zip(hidden.row_slice(i)) {
            *o += x;
        }
    }
    for o in &mut out {
        *o /= n as f64;
    }
    Ok(out)
}
