//! Variational topic model over bag-of-words counts: a sigmoid MLP encoder
//! gives a diagonal Gaussian posterior, a softmax decoder scores words.

mod topics;

pub(crate) use topics::argmax;
pub use topics::{dominant_topic, topic_report, topic_terms, top_word_ids, TOPIC_REPORT_TERMS};

use crate::corpus::BowVector;
use crate::numkernel::{
    bind_params, sample_normal, sample_standard_normal, KernelError, Parameters, RngState, Tape,
    Tensor, Var,
};

type Result<T> = std::result::Result<T, KernelError>;

pub const DEFAULT_TOPICS: usize = 100;
pub const DEFAULT_HIDDEN: usize = 256;
pub const DEFAULT_SAMPLES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NvdmConfig {
    /// Vocabulary size `Z`.
    pub vocab_size: usize,
    /// Encoder hidden width `H`.
    pub hidden: usize,
    /// Number of topics `K`.
    pub topics: usize,
}

/// Weights are stored input-major: `enc_w` is `[Z, H]`, `dec_u` is
/// `[K, Z]`. Biases are 1-D.
#[derive(Clone, Debug, PartialEq)]
pub struct NvdmParams {
    pub enc_w: Tensor,
    pub enc_b: Tensor,
    pub l1_w: Tensor,
    pub l1_b: Tensor,
    pub l2_w: Tensor,
    pub l2_b: Tensor,
    pub dec_u: Tensor,
    pub dec_c: Tensor,
}

pub const NVDM_TENSOR_NAMES: [&str; 8] = [
    "enc.mlp.w", "enc.mlp.b", "l1.w", "l1.b", "l2.w", "l2.b", "dec.u", "dec.c",
];

impl NvdmParams {
    pub fn zeros(cfg: NvdmConfig) -> Self {
        let NvdmConfig {
            vocab_size: z,
            hidden: h,
            topics: k,
        } = cfg;
        Self {
            enc_w: Tensor::zeros(&[z, h]),
            enc_b: Tensor::zeros(&[h]),
            l1_w: Tensor::zeros(&[h, k]),
            l1_b: Tensor::zeros(&[k]),
            l2_w: Tensor::zeros(&[h, k]),
            l2_b: Tensor::zeros(&[k]),
            dec_u: Tensor::zeros(&[k, z]),
            dec_c: Tensor::zeros(&[z]),
        }
    }

    /// Glorot-scaled normal weights, zero biases. The log-variance head
    /// starts at zero so every posterior begins with unit variance.
    pub fn init(cfg: NvdmConfig, rng: &mut RngState) -> Self {
        let glorot = |rng: &mut RngState, i: usize, o: usize| {
            sample_normal(rng, &[i, o], (2.0 / (i + o) as f64).sqrt())
        };
        let mut p = Self::zeros(cfg);
        p.enc_w = glorot(rng, cfg.vocab_size, cfg.hidden);
        p.l1_w = glorot(rng, cfg.hidden, cfg.topics);
        p.dec_u = glorot(rng, cfg.topics, cfg.vocab_size);
        p
    }

    pub fn config(&self) -> NvdmConfig {
        NvdmConfig {
            vocab_size: self.enc_w.shape()[0],
            hidden: self.enc_w.shape()[1],
            topics: self.l1_w.shape()[1],
        }
    }

    /// Rebuilds from named tensors (any order), checking every shape.
    pub fn from_named(mut named: Vec<(String, Tensor)>) -> Result<Self> {
        let mut take = |name: &str| {
            let i = named.iter().position(|(n, _)| n == name).ok_or_else(|| {
                KernelError::Contract(format!("missing tensor {name}"))
            })?;
            Ok::<_, KernelError>(named.swap_remove(i).1)
        };
        let p = Self {
            enc_w: take("enc.mlp.w")?,
            enc_b: take("enc.mlp.b")?,
            l1_w: take("l1.w")?,
            l1_b: take("l1.b")?,
            l2_w: take("l2.w")?,
            l2_b: take("l2.b")?,
            dec_u: take("dec.u")?,
            dec_c: take("dec.c")?,
        };
        if p.enc_w.shape().len() != 2 || p.l1_w.shape().len() != 2 {
            return Err(KernelError::Contract("nvdm weights must be matrices".into()));
        }
        let expected = Self::zeros(p.config());
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

impl Parameters for NvdmParams {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let t = [
            &self.enc_w, &self.enc_b, &self.l1_w, &self.l1_b, &self.l2_w, &self.l2_b, &self.dec_u,
            &self.dec_c,
        ];
        NVDM_TENSOR_NAMES.iter().map(|n| n.to_string()).zip(t).collect()
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let t = [
            &mut self.enc_w,
            &mut self.enc_b,
            &mut self.l1_w,
            &mut self.l1_b,
            &mut self.l2_w,
            &mut self.l2_b,
            &mut self.dec_u,
            &mut self.dec_c,
        ];
        NVDM_TENSOR_NAMES.iter().map(|n| n.to_string()).zip(t).collect()
    }
}

/// [`NvdmParams`] placed on a tape.
#[derive(Clone, Copy)]
pub struct NvdmVars<'t> {
    pub enc_w: Var<'t>,
    pub enc_b: Var<'t>,
    pub l1_w: Var<'t>,
    pub l1_b: Var<'t>,
    pub l2_w: Var<'t>,
    pub l2_b: Var<'t>,
    pub dec_u: Var<'t>,
    pub dec_c: Var<'t>,
}

impl<'t> NvdmVars<'t> {
    /// From variables in [`Parameters`] order.
    pub fn from_vars(v: &[Var<'t>]) -> Result<Self> {
        let [enc_w, enc_b, l1_w, l1_b, l2_w, l2_b, dec_u, dec_c] = v[..] else {
            return Err(KernelError::Contract(format!("expected 8 nvdm tensors, got {}", v.len())));
        };
        Ok(Self {
            enc_w,
            enc_b,
            l1_w,
            l1_b,
            l2_w,
            l2_b,
            dec_u,
            dec_c,
        })
    }

    pub fn bind(tape: &'t Tape, p: &NvdmParams) -> Self {
        Self::from_vars(&bind_params(tape, p)).expect("eight tensors")
    }

    pub fn tape(&self) -> &'t Tape {
        self.enc_w.tape()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EncodeMode {
    /// `h = mu + eps * sigma` with fresh standard normal `eps`.
    Sampled,
    /// `h = mu`.
    Deterministic,
}

/// Batched forward pass; every tensor has one row per document.
#[derive(Clone, Copy)]
pub struct NvdmForward<'t> {
    pub mu: Var<'t>,
    pub log_var: Var<'t>,
    /// The last sample drawn (or `mu` in deterministic mode).
    pub h: Var<'t>,
    /// `[b, 1]` reconstruction log-likelihood, averaged over samples.
    pub log_likelihood: Var<'t>,
    /// `[b, 1]`.
    pub kld: Var<'t>,
    /// `[b, 1]`: `log_likelihood - kld`.
    pub elbo: Var<'t>,
}

/// Dense `[b, Z]` count matrix.
pub fn count_matrix(bows: &[&BowVector], z: usize) -> Tensor {
    let mut data = vec![0.0; bows.len() * z];
    for (row, bow) in data.chunks_mut(z).zip(bows) {
        for (&i, &c) in bow.counts() {
            row[i] = c as f64;
        }
    }
    Tensor::new(&[bows.len(), z], data).expect("consistent size")
}

/// One `[b, K]` standard-normal draw per Monte-Carlo sample.
pub fn draw_noise(rng: &mut RngState, b: usize, k: usize, samples: usize) -> Vec<Tensor> {
    (0..samples)
        .map(|_| sample_standard_normal(rng, &[b, k]))
        .collect()
}

fn row_sums<'t>(x: Var<'t>) -> Result<Var<'t>> {
    let ones = x.tape().constant(Tensor::ones(&[x.value().last_dim(), 1]));
    x.matmul(ones)
}

/// Runs the encoder on `counts` (`[b, Z]`) and scores the documents under
/// the decoder. With `noise` the likelihood is averaged over one
/// reparameterized sample per tensor; without it `h = mu`.
pub fn forward<'t>(
    v: &NvdmVars<'t>,
    counts: &Tensor,
    noise: Option<&[Tensor]>,
) -> Result<NvdmForward<'t>> {
    let tape = v.tape();
    let counts_v = tape.constant(counts.clone());
    let pi = counts_v.matmul(v.enc_w)?.add_bias(v.enc_b)?.sigmoid();
    let mu = pi.matmul(v.l1_w)?.add_bias(v.l1_b)?;
    let log_var = pi.matmul(v.l2_w)?.add_bias(v.l2_b)?;

    let decode = |h: Var<'t>| -> Result<Var<'t>> {
        let logp = h.matmul(v.dec_u)?.add_bias(v.dec_c)?.log_softmax(1)?;
        row_sums(logp.mul(counts_v)?)
    };

    let (h, log_likelihood) = match noise {
        None => (mu, decode(mu)?),
        Some([]) => return Err(KernelError::Contract("at least one sample required".into())),
        Some(eps) => {
            let sigma = log_var.scale(0.5).exp();
            let mut h = mu;
            let mut total: Option<Var<'t>> = None;
            for e in eps {
                h = mu.add(tape.constant(e.clone()).mul(sigma)?)?;
                let ll = decode(h)?;
                total = Some(match total {
                    None => ll,
                    Some(t) => t.add(ll)?,
                });
            }
            (h, total.expect("non-empty").scale(1.0 / eps.len() as f64))
        }
    };

    let kl_terms = log_var
        .add_scalar(1.0)
        .sub(mu.mul(mu)?)?
        .sub(log_var.exp())?;
    let kld = row_sums(kl_terms)?.scale(-0.5);
    let elbo = log_likelihood.sub(kld)?;
    Ok(NvdmForward {
        mu,
        log_var,
        h,
        log_likelihood,
        kld,
        elbo,
    })
}

/// Posterior summary of one document.
#[derive(Clone, Debug, PartialEq)]
pub struct TopicState {
    pub mu: Vec<f64>,
    pub log_var: Vec<f64>,
    pub h_tm: Vec<f64>,
    pub kld: f64,
}

fn single(bow: &BowVector, params: &NvdmParams) -> Result<Tensor> {
    if bow.is_empty() {
        return Err(KernelError::Contract("empty bag of words".into()));
    }
    let z = params.config().vocab_size;
    if let Some((&last, _)) = bow.counts().last_key_value() {
        if last >= z {
            return Err(KernelError::Contract(format!("word id {last} outside vocabulary of {z}")));
        }
    }
    Ok(count_matrix(&[bow], z))
}

fn state_of(f: &NvdmForward<'_>) -> Result<TopicState> {
    Ok(TopicState {
        mu: f.mu.value().into_vec(),
        log_var: f.log_var.value().into_vec(),
        h_tm: f.h.value().into_vec(),
        kld: f.kld.item()?,
    })
}

pub fn encode(
    bow: &BowVector,
    params: &NvdmParams,
    rng: &mut RngState,
    mode: EncodeMode,
) -> Result<TopicState> {
    let counts = single(bow, params)?;
    let tape = Tape::new();
    let v = NvdmVars::bind(&tape, params);
    let noise = match mode {
        EncodeMode::Sampled => Some(draw_noise(rng, 1, params.config().topics, 1)),
        EncodeMode::Deterministic => None,
    };
    state_of(&forward(&v, &counts, noise.as_deref())?)
}

/// `-1/2 * sum(1 + log_var - mu^2 - exp(log_var))`: KL of the diagonal
/// Gaussian from the standard normal.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    -0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(&m, &lv)| 1.0 + lv - m * m - lv.exp())
        .sum::<f64>()
}

/// Sum over tokens of the decoder's log-probability for that token.
pub fn log_likelihood(bow: &BowVector, h_tm: &[f64], params: &NvdmParams) -> Result<f64> {
    let cfg = params.config();
    if h_tm.len() != cfg.topics {
        return Err(KernelError::Contract(format!(
            "h_tm has {} entries, model has {} topics",
            h_tm.len(),
            cfg.topics
        )));
    }
    let tape = Tape::new();
    let logits = tape
        .constant(Tensor::row(h_tm))
        .matmul(tape.constant(params.dec_u.clone()))?
        .add_bias(tape.constant(params.dec_c.clone()))?
        .log_softmax(1)?
        .value();
    let mut total = 0.0;
    for (&i, &c) in bow.counts() {
        let lp = logits.data().get(i).ok_or_else(|| {
            KernelError::Contract(format!("word id {i} outside vocabulary of {}", cfg.vocab_size))
        })?;
        total += c as f64 * lp;
    }
    Ok(total)
}

/// Monte-Carlo ELBO with `samples` draws, and the posterior state of the
/// last draw.
pub fn elbo(
    bow: &BowVector,
    params: &NvdmParams,
    rng: &mut RngState,
    samples: usize,
) -> Result<(f64, TopicState)> {
    if samples == 0 {
        return Err(KernelError::Contract("at least one sample required".into()));
    }
    let counts = single(bow, params)?;
    let tape = Tape::new();
    let v = NvdmVars::bind(&tape, params);
    let noise = draw_noise(rng, 1, params.config().topics, samples);
    let f = forward(&v, &counts, Some(&noise))?;
    Ok((f.elbo.item()?, state_of(&f)?))
}
