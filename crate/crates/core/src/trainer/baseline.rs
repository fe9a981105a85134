use std::time::Instant;

use super::{
    classification_scores, run_id, stream, Adam, Dataset, EpochStats, Evaluation, Mode, ModelShape, PreparedDoc,
    RunMetrics, TrainConfig, TrainError,
};
use crate::encoder::{attention_ops, mean_pooled_embedding, EncoderConfig, EncoderParams};
use crate::numkernel::{bind_params, collect_grads, Parameters, RngState, Tape, Tensor, Var};
use crate::nvdm::{encode, EncodeMode, NvdmParams};

/// Step size of the logistic baselines; they train a convex model from
/// zero, so a large rate is safe.
pub const BASELINE_LR: f64 = 0.05;

/// Softmax regression `softmax(f W + c)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Logistic {
    pub w: Tensor,
    pub c: Tensor,
}

impl Logistic {
    pub fn zeros(features: usize, labels: usize) -> Self {
        Self {
            w: Tensor::zeros(&[features, labels]),
            c: Tensor::zeros(&[labels]),
        }
    }

    /// Mean negative log-likelihood of `labels` under the current weights.
    pub fn loss(&self, x: &Tensor, labels: &[usize]) -> Result<f64, TrainError> {
        let tape = Tape::new();
        let vars = bind_params(&tape, self);
        let lp = log_probs(&tape, &vars, x)?.value();
        Ok(-labels.iter().enumerate().map(|(r, &y)| lp.row_slice(r)[y]).sum::<f64>() / labels.len() as f64)
    }

    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>, TrainError> {
        let tape = Tape::new();
        let vars = bind_params(&tape, self);
        let lp = log_probs(&tape, &vars, x)?.value();
        Ok((0..lp.rows()).map(|r| crate::fusion::predict(lp.row_slice(r))).collect())
    }
}

fn log_probs<'t>(tape: &'t Tape, vars: &[Var<'t>], x: &Tensor) -> Result<Var<'t>, TrainError> {
    Ok(tape.constant(x.clone()).matmul(vars[0])?.add_bias(vars[1])?.log_softmax(1)?)
}

impl Parameters for Logistic {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        vec![("logistic.w".into(), &self.w), ("logistic.c".into(), &self.c)]
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        vec![("logistic.w".into(), &mut self.w), ("logistic.c".into(), &mut self.c)]
    }
}

/// Mean-pooled encoder states of each document's full sequence, followed
/// by the topic mean when `nvdm` is given (zeros for an empty bag of
/// words). Width `H_B` or `H_B + K`.
pub fn baseline_features(
    docs: &[PreparedDoc],
    encoder: &EncoderParams,
    nvdm: Option<&NvdmParams>,
) -> Result<Tensor, TrainError> {
    let width = encoder.config().hidden + nvdm.map_or(0, |n| n.config().topics);
    let mut data = Vec::with_capacity(docs.len() * width);
    let mut unused = RngState::new(0);
    for d in docs {
        data.extend(mean_pooled_embedding(&d.full, encoder)?);
        if let Some(n) = nvdm {
            if d.bow.is_empty() {
                data.extend(std::iter::repeat_n(0.0, n.config().topics));
            } else {
                data.extend(encode(&d.bow, n, &mut unused, EncodeMode::Deterministic)?.mu);
            }
        }
    }
    Ok(Tensor::new(&[docs.len(), width], data)?)
}

fn rows(x: &Tensor, idx: &[usize]) -> Result<Tensor, TrainError> {
    let w = x.last_dim();
    let data = idx.iter().flat_map(|&i| x.row_slice(i).iter().copied()).collect();
    Ok(Tensor::new(&[idx.len(), w], data)?)
}

/// A trained baseline: the frozen encoder, the optional topic model and the
/// regression on their features.
#[derive(Clone, Debug, PartialEq)]
pub struct BaselineModel {
    pub encoder: EncoderParams,
    pub nvdm: Option<NvdmParams>,
    pub logistic: Logistic,
}

impl BaselineModel {
    pub fn predict(&self, docs: &[PreparedDoc]) -> Result<Vec<usize>, TrainError> {
        self.logistic.predict(&baseline_features(docs, &self.encoder, self.nvdm.as_ref())?)
    }

    pub fn evaluate(&self, docs: &[PreparedDoc]) -> Result<Evaluation, TrainError> {
        let gold: Vec<usize> = docs.iter().map(|d| d.label).collect();
        classification_scores(&gold, &self.predict(docs)?, self.logistic.c.numel())
    }
}

impl Parameters for BaselineModel {
    fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = self.nvdm.as_ref().map_or_else(Vec::new, |n| n.tensors());
        out.extend(self.encoder.tensors());
        out.extend(self.logistic.tensors());
        out
    }

    fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = self.nvdm.as_mut().map_or_else(Vec::new, |n| n.tensors_mut());
        out.extend(self.encoder.tensors_mut());
        out.extend(self.logistic.tensors_mut());
        out
    }
}

fn scores(model: &Logistic, x: &Tensor, docs: &[PreparedDoc], labels: usize) -> Result<Evaluation, TrainError> {
    let gold: Vec<usize> = docs.iter().map(|d| d.label).collect();
    classification_scores(&gold, &model.predict(x)?, labels)
}

/// Logistic regression over frozen features of a randomly initialized
/// encoder (seeded from `seed`), optionally with the topic vector
/// appended. Only the regression weights are trained; they start at zero.
pub fn run_baseline(
    data: &Dataset,
    mode: Mode,
    nvdm: Option<&NvdmParams>,
    shape: &ModelShape,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(BaselineModel, RunMetrics), TrainError> {
    let nvdm = match (mode, nvdm) {
        (Mode::BertAvg, _) => None,
        (Mode::BertAvgDtr, Some(n)) => Some(n),
        (Mode::BertAvgDtr, None) => return Err(TrainError::Contract("bert_avg_dtr needs a topic model".into())),
        (m, _) => return Err(TrainError::Contract(format!("{m} is not a baseline mode"))),
    };
    if cfg.epochs == 0 || cfg.batch == 0 || data.train.is_empty() {
        return Err(TrainError::Contract("baseline needs epochs, a batch size and training data".into()));
    }
    let root = RngState::new(seed);
    let encoder = EncoderParams::init(
        EncoderConfig {
            vocab_size: data.seq_vocab.len(),
            max_len: data.max_len,
            hidden: shape.enc_hidden,
            layers: shape.enc_layers,
            heads: shape.enc_heads,
        },
        &mut root.derive(stream::MODEL_INIT),
    )?;
    let start = Instant::now();
    let train_x = baseline_features(&data.train, &encoder, nvdm)?;
    let dev_x = baseline_features(&data.dev, &encoder, nvdm)?;
    let feature_ops = data.train.len() as u64 * attention_ops(data.max_len, shape.enc_hidden, shape.enc_layers);
    let feature_s = start.elapsed().as_secs_f64();

    let labels = data.num_labels;
    let mut model = Logistic::zeros(train_x.last_dim(), labels);
    let mut best = model.clone();
    let mut opt = Adam::new(&model, |_| BASELINE_LR);
    let mut shuffle = root.derive(stream::BASELINE);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let train_y: Vec<usize> = data.train.iter().map(|d| d.label).collect();
    let mut metrics = RunMetrics {
        run_id: run_id(mode, data.max_len, 1),
        seed,
        mode,
        p: 1,
        epochs: Vec::new(),
        best_epoch: 0,
        dev_f1: f64::NEG_INFINITY,
        test: None,
        batches_per_epoch: data.train.len().div_ceil(cfg.batch),
    };
    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        shuffle.shuffle(&mut order);
        let mut loss = 0.0;
        for batch in order.chunks(cfg.batch) {
            let x = rows(&train_x, batch)?;
            let y: Vec<usize> = batch.iter().map(|&i| train_y[i]).collect();
            let tape = Tape::new();
            let vars = bind_params(&tape, &model);
            let lp = log_probs(&tape, &vars, &x)?;
            let mut onehot = vec![0.0; y.len() * labels];
            for (r, &l) in y.iter().enumerate() {
                onehot[r * labels + l] = 1.0;
            }
            let ll = lp.mul(tape.constant(Tensor::new(&[y.len(), labels], onehot)?))?.sum();
            loss -= ll.item()?;
            tape.backward(ll.scale(-1.0 / y.len() as f64))?;
            opt.step(&mut model, &collect_grads(&tape, &vars));
        }
        let dev_f1 = if data.dev.is_empty() {
            0.0
        } else {
            scores(&model, &dev_x, &data.dev, labels)?.macro_f1
        };
        let mut s = EpochStats {
            epoch,
            loss_joint: loss / data.train.len() as f64,
            loss_ce: loss / data.train.len() as f64,
            dev_f1,
            wall_s: start.elapsed().as_secs_f64(),
            ..Default::default()
        };
        if epoch == 1 {
            s.wall_s += feature_s;
            s.attn_ops = feature_ops;
        }
        if dev_f1 > metrics.dev_f1 {
            metrics.dev_f1 = dev_f1;
            metrics.best_epoch = epoch;
            best = model.clone();
        }
        metrics.epochs.push(s);
    }
    if !data.test.is_empty() {
        let test_x = baseline_features(&data.test, &encoder, nvdm)?;
        metrics.test = Some(scores(&best, &test_x, &data.test, labels)?);
    }
    Ok((
        BaselineModel {
            encoder,
            nvdm: nvdm.cloned(),
            logistic: best,
        },
        metrics,
    ))
}
