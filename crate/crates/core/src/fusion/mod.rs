//! Joins a document's topic vector with a partition's `CLS` state,
//! classifies the result and forms the joint objective.

use crate::corpus::{BowVector, TokenSequence};
use crate::encoder::{forward_sequence, EncoderParams, EncoderVars, OpCounts};
use crate::numkernel::{
    bind_params, sample_normal, softmax, KernelError, Parameters, RngState, Tape, Tensor, Var,
};
use crate::nvdm::{self, count_matrix, draw_noise, NvdmParams, NvdmVars};

type Result<T> = std::result::Result<T, KernelError>;

pub const DEFAULT_ALPHA: f64 = 0.9;

/// Projection `P` (`[K + H_B, H_B]`) and classifier `Q` (`[H_B, L]`), `b`
/// (`[L]`). With `K = 0` the head reads the `CLS` state alone.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub p: Tensor,
    pub q: Tensor,
    pub b: Tensor,
}

pub const FUSION_TENSOR_NAMES: [&str; 3] = ["fusion.p", "fusion.q", "fusion.b"];

impl FusionParams {
    /// Glorot-scaled normal `P` and `Q`, zero bias.
    pub fn init(topics: usize, hidden: usize, labels: usize, rng: &mut RngState) -> Self {
        let fan_in = topics + hidden;
        Self {
            p: sample_normal(rng, &[fan_in, hidden], (2.0 / (fan_in + hidden) as f64).sqrt()),
            q: sample_normal(rng, &[hidden, labels], (2.0 / (hidden + labels) as f64).sqrt()),
            b: Tensor::zeros(&[labels]),
        }
    }

    pub fn hidden(&self) -> usize {
        self.p.shape()[1]
    }

    pub fn topics(&self) -> usize {
        self.p.shape()[0] - self.hidden()
    }

    pub fn labels(&self) -> usize {
        self.q.shape()[1]
    }

    pub fn from_named(mut named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut take = |name: &str| {
            let i = named
                .iter()
                .position(|(n, _)| n == name)
                .ok_or_else(|| KernelError::Contract(format!("missing tensor {name}")))?;
            Ok::<_, KernelError>(named.swap_remove(i).1)
        };
        let f = Self {
            p: take("fusion.p")?,
            q: take("fusion.q")?,
            b: take("fusion.b")?,
        };
        let ok = f.p.shape().len() == 2
            && f.q.shape().len() == 2
            && f.p.shape()[0] >= f.p.shape()[1]
            && f.q.shape()[0] == f.p.shape()[1]
            && f.b.shape() == [f.q.shape()[1]];
        if !ok {
            return Err(KernelError::Contract("inconsistent fusion tensor shapes".into()));
        }
        Ok(f)
    }
}

impl Parameters for FusionParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let t = [&self.p, &self.q, &self.b];
        FUSION_TENSOR_NAMES.iter().map(|n| n.to_string()).zip(t).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let t = [&mut self.p, &mut self.q, &mut self.b];
        FUSION_TENSOR_NAMES.iter().map(|n| n.to_string()).zip(t).collect()
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 {
        Ok(())
    } else {
        Err(KernelError::Contract(format!("alpha must lie in (0, 1), got {alpha}")))
    }
}

/// `h_p = [h_tm, o_cls] P`.
pub fn fuse(h_tm: &[f64], o_cls: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    if h_tm.len() != params.topics() || o_cls.len() != params.hidden() {
        return Err(KernelError::Contract(format!(
            "fuse expects {} topic and {} hidden entries, got {} and {}",
            params.topics(),
            params.hidden(),
            h_tm.len(),
            o_cls.len()
        )));
    }
    let tape = Tape::new();
    let x = tape.constant(Tensor::row(&[h_tm, o_cls].concat()));
    Ok(x.matmul(tape.constant(params.p.clone()))?.value().into_vec())
}

/// Label distribution `softmax(h_p Q + b)`.
pub fn classify(h_p: &[f64], params: &FusionParams) -> Result<Vec<f64>> {
    let tape = Tape::new();
    let logits = tape
        .constant(Tensor::row(h_p))
        .matmul(tape.constant(params.q.clone()))?
        .add_bias(tape.constant(params.b.clone()))?;
    Ok(softmax(&logits.value(), 1)?.into_vec())
}

/// Index of the largest entry; the smallest index among ties.
pub fn predict(scores: &[f64]) -> usize {
    crate::nvdm::argmax(scores)
}

/// Averages per-partition label log-probabilities of one document and
/// returns the winning label with the averaged scores.
pub fn aggregate_partitions(log_probs: &[Vec<f64>]) -> (usize, Vec<f64>) {
    let n = log_probs.len().max(1) as f64;
    let l = log_probs.first().map_or(0, Vec::len);
    let mean: Vec<f64> = (0..l)
        .map(|j| log_probs.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    (predict(&mean), mean)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JointLossBreakdown {
    pub log_p_y: f64,
    pub elbo: f64,
    pub kld: f64,
    pub joint: f64,
    pub alpha: f64,
}

/// `alpha * log_p_y + (1 - alpha) * elbo`; training minimizes its
/// negation.
pub fn joint_objective(alpha: f64, log_p_y: f64, elbo: f64) -> f64 {
    alpha * log_p_y + (1.0 - alpha) * elbo
}

/// All trainable tensors of a topic-fused classifier. Without `nvdm` the
/// model is the encoder with the same head (`K = 0`).
#[derive(Clone, Debug, PartialEq)]
pub struct FusedModel {
    pub nvdm: Option<NvdmParams>,
    pub encoder: EncoderParams,
    pub fusion: FusionParams,
}

impl FusedModel {
    pub fn validate(&self) -> Result<()> {
        let k = self.nvdm.as_ref().map_or(0, |n| n.config().topics);
        let h = self.encoder.config().hidden;
        if self.fusion.topics() != k || self.fusion.hidden() != h {
            return Err(KernelError::Contract(format!(
                "fusion head is [{} + {}], model has K={k}, H_B={h}",
                self.fusion.topics(),
                self.fusion.hidden()
            )));
        }
        Ok(())
    }

    pub fn labels(&self) -> usize {
        self.fusion.labels()
    }
}

impl Parameters for FusedModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.nvdm.as_ref().map_or_else(Vec::new, |n| n.tensors());
        out.extend(self.encoder.tensors());
        out.extend(self.fusion.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.nvdm.as_mut().map_or_else(Vec::new, |n| n.tensors_mut());
        out.extend(self.encoder.tensors_mut());
        out.extend(self.fusion.tensors_mut());
        out
    }
}

/// [`FusedModel`] placed on a tape.
#[derive(Clone)]
pub struct FusedVars<'t> {
    pub nvdm: Option<NvdmVars<'t>>,
    pub encoder: EncoderVars<'t>,
    pub p: Var<'t>,
    pub q: Var<'t>,
    pub b: Var<'t>,
}

impl<'t> FusedVars<'t> {
    /// From variables in [`Parameters`] order of `model`.
    pub fn from_vars(model: &FusedModel, v: &[Var<'t>]) -> Result<Self> {
        let n_nvdm = if model.nvdm.is_some() { 8 } else { 0 };
        let n_enc = model.encoder.tensors().len();
        if v.len() != n_nvdm + n_enc + 3 {
            return Err(KernelError::Contract(format!("{} model tensors", v.len())));
        }
        let nvdm = if n_nvdm > 0 {
            Some(NvdmVars::from_vars(&v[..8])?)
        } else {
            None
        };
        let encoder = EncoderVars::from_vars(model.encoder.heads, &v[n_nvdm..n_nvdm + n_enc])?;
        let [p, q, b] = v[n_nvdm + n_enc..] else {
            unreachable!("length checked above")
        };
        Ok(Self {
            nvdm,
            encoder,
            p,
            q,
            b,
        })
    }

    pub fn bind(tape: &'t Tape, model: &FusedModel) -> Self {
        Self::from_vars(model, &bind_params(tape, model)).expect("well-formed model")
    }
}

/// One training document: full bag of words, its partitions, its label.
#[derive(Clone, Copy, Debug)]
pub struct DocInput<'a> {
    pub bow: &'a BowVector,
    pub partitions: &'a [TokenSequence],
    pub label: usize,
}

/// How a batch is evaluated.
pub enum Sampling<'r> {
    /// `h = mu`, no dropout.
    Deterministic,
    /// Draws posterior noise with `samples` samples and dropout masks.
    Train { rng: &'r mut RngState, samples: usize, dropout: bool },
    /// Caller-fixed posterior noise (one `[b, K]` tensor per sample), no
    /// dropout; for gradient checks.
    FixedNoise(&'r [Tensor]),
}

/// Terms of one batch. Every partition is an instance sharing its
/// document's topic vector and label.
pub struct BatchTerms<'t> {
    /// Scalar to minimize: mean over instances of `-joint`.
    pub loss: Var<'t>,
    /// `[n, L]` label log-probabilities, instances in document order.
    pub log_probs: Var<'t>,
    /// Document index of each instance.
    pub instance_doc: Vec<usize>,
    pub log_p_y_sum: f64,
    /// Sums over instances of the per-document terms (empty documents
    /// contribute zero).
    pub elbo_sum: f64,
    pub kld_sum: f64,
    pub instances: usize,
    pub ops: OpCounts,
    /// Decoder operations: `K * Z` per document.
    pub topic_ops: u64,
}

/// Builds the joint objective for a batch of documents. Without a topic
/// model the loss is the classification term alone.
pub fn batch_terms<'t>(
    v: &FusedVars<'t>,
    docs: &[DocInput<'_>],
    alpha: f64,
    sampling: Sampling<'_>,
) -> Result<BatchTerms<'t>> {
    check_alpha(alpha)?;
    let tape = v.p.tape();
    let labels = v.q.value().last_dim();
    let (mut train, fixed) = match sampling {
        Sampling::Deterministic => (None, None),
        Sampling::Train {
            rng,
            samples,
            dropout,
        } => (Some((rng, samples.max(1), dropout)), None),
        Sampling::FixedNoise(n) => (None, Some(n)),
    };

    let mut instance_doc = Vec::new();
    for (i, d) in docs.iter().enumerate() {
        if d.label >= labels {
            return Err(KernelError::Contract(format!("label {} of {labels}", d.label)));
        }
        if d.partitions.is_empty() {
            return Err(KernelError::Contract("document without partitions".into()));
        }
        instance_doc.extend(std::iter::repeat_n(i, d.partitions.len()));
    }
    let n = instance_doc.len();

    let mut topic_ops = 0;
    let mut elbo_weighted = None;
    let mut elbo_sum = 0.0;
    let mut kld_sum = 0.0;
    let h_inst = match &v.nvdm {
        None => None,
        Some(nv) => {
            let z = nv.dec_c.value().numel();
            let k = nv.l1_b.value().numel();
            topic_ops = (docs.len() * k * z) as u64;
            let bows: Vec<&BowVector> = docs.iter().map(|d| d.bow).collect();
            let counts = count_matrix(&bows, z);
            let drawn;
            let noise: Option<&[Tensor]> = match (&mut train, fixed) {
                (Some((rng, samples, _)), _) => {
                    drawn = draw_noise(rng, docs.len(), k, *samples);
                    Some(&drawn)
                }
                (None, Some(f)) => Some(f),
                (None, None) => None,
            };
            let f = nvdm::forward(nv, &counts, noise)?;
            // Empty documents: zero topic vector, no ELBO term.
            let keep: Vec<f64> = docs.iter().map(|d| f64::from(!d.bow.is_empty() as u8)).collect();
            let row_mask = Tensor::new(&[docs.len(), k], keep.iter().flat_map(|&m| vec![m; k]).collect())?;
            let h = f.h.mul(tape.constant(row_mask))?;
            let weights: Vec<f64> = docs
                .iter()
                .zip(&keep)
                .map(|(d, &m)| m * d.partitions.len() as f64)
                .collect();
            let w = tape.constant(Tensor::new(&[docs.len(), 1], weights.clone())?);
            let e = f.elbo.mul(w)?.sum();
            elbo_sum = e.item()?;
            kld_sum = f
                .kld
                .value()
                .data()
                .iter()
                .zip(&weights)
                .map(|(a, b)| a * b)
                .sum();
            elbo_weighted = Some(e);
            Some(h.embedding(&instance_doc)?)
        }
    };

    let mut ops = OpCounts::default();
    let mut cls_cols = Vec::with_capacity(n);
    for d in docs {
        for part in d.partitions {
            let rng = match &mut train {
                Some((rng, _, true)) => Some(&mut **rng),
                _ => None,
            };
            let f = forward_sequence(&v.encoder, part, &part.mask(), rng)?;
            ops += f.ops;
            cls_cols.push(f.cls.transpose()?);
        }
    }
    let o_cls = Var::concat(&cls_cols)?.transpose()?;
    let joined = match h_inst {
        Some(h) => Var::concat(&[h, o_cls])?,
        None => o_cls,
    };
    let log_probs = joined
        .matmul(v.p)?
        .matmul(v.q)?
        .add_bias(v.b)?
        .log_softmax(1)?;
    let mut onehot = vec![0.0; n * labels];
    for (j, &doc) in instance_doc.iter().enumerate() {
        onehot[j * labels + docs[doc].label] = 1.0;
    }
    let log_p_y = log_probs.mul(tape.constant(Tensor::new(&[n, labels], onehot)?))?.sum();
    let log_p_y_sum = log_p_y.item()?;
    let objective = match elbo_weighted {
        Some(e) => log_p_y.scale(alpha).add(e.scale(1.0 - alpha))?,
        None => log_p_y,
    };
    Ok(BatchTerms {
        loss: objective.scale(-1.0 / n as f64),
        log_probs,
        instance_doc,
        log_p_y_sum,
        elbo_sum,
        kld_sum,
        instances: n,
        ops,
        topic_ops,
    })
}

/// Joint objective of one document and one of its partitions.
pub fn joint_loss(
    bow: &BowVector,
    partition: &TokenSequence,
    label: usize,
    model: &FusedModel,
    rng: &mut RngState,
    alpha: f64,
) -> Result<JointLossBreakdown> {
    model.validate()?;
    if model.nvdm.is_none() {
        return Err(KernelError::Contract("joint loss needs a topic model".into()));
    }
    let tape = Tape::new();
    let v = FusedVars::bind(&tape, model);
    let parts = [partition.clone()];
    let doc = DocInput {
        bow,
        partitions: &parts,
        label,
    };
    let sampling = Sampling::Train {
        rng,
        samples: 1,
        dropout: false,
    };
    let t = batch_terms(&v, &[doc], alpha, sampling)?;
    Ok(JointLossBreakdown {
        log_p_y: t.log_p_y_sum,
        elbo: t.elbo_sum,
        kld: t.kld_sum,
        joint: joint_objective(alpha, t.log_p_y_sum, t.elbo_sum),
        alpha,
    })
}
