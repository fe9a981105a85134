use std::time::Instant;

use super::{
    classification_scores, run_id, stream, Adam, Dataset, EpochStats, Evaluation, Mode, ModelShape, PreparedDoc,
    RunMetrics, TrainConfig, TrainError,
};
use crate::encoder::{EncoderConfig, EncoderParams};
use crate::fusion::{
    aggregate_partitions, batch_terms, DocInput, FusedModel, FusedVars, FusionParams, Sampling, DEFAULT_ALPHA,
};
use crate::numkernel::{bind_constants, bind_params, collect_grads, RngState, Tape};
use crate::nvdm::{NvdmParams, NVDM_TENSOR_NAMES};

/// Documents per evaluation tape.
pub const EVAL_BATCH: usize = 16;

fn inputs<'a>(docs: &[&'a PreparedDoc]) -> Vec<DocInput<'a>> {
    docs.iter()
        .map(|d| DocInput {
            bow: &d.bow,
            partitions: &d.parts.partitions,
            label: d.label,
        })
        .collect()
}

/// Fresh encoder and head for `data`, reading partitions of length
/// `data.x()`. The topic model is attached as given (`None` for an
/// encoder-only model).
pub fn init_model(
    data: &Dataset,
    nvdm: Option<NvdmParams>,
    shape: &ModelShape,
    seed: u64,
) -> Result<FusedModel, TrainError> {
    if let Some(n) = &nvdm {
        if n.config().vocab_size != data.vocab.len() {
            return Err(TrainError::Contract(format!(
                "topic model has {} words, corpus vocabulary {}",
                n.config().vocab_size,
                data.vocab.len()
            )));
        }
    }
    let mut rng = RngState::new(seed).derive(stream::MODEL_INIT);
    let encoder = EncoderParams::init(
        EncoderConfig {
            vocab_size: data.seq_vocab.len(),
            max_len: data.x(),
            hidden: shape.enc_hidden,
            layers: shape.enc_layers,
            heads: shape.enc_heads,
        },
        &mut rng,
    )?;
    let topics = nvdm.as_ref().map_or(0, |n| n.config().topics);
    let fusion = FusionParams::init(topics, shape.enc_hidden, data.num_labels, &mut rng);
    Ok(FusedModel {
        nvdm,
        encoder,
        fusion,
    })
}

/// Label log-probabilities of each document: the mean over its partitions
/// of the per-partition log-probabilities, with `h = mu` and no dropout.
pub fn document_log_probs(model: &FusedModel, docs: &[PreparedDoc]) -> Result<Vec<Vec<f64>>, TrainError> {
    model.validate()?;
    let mut out = Vec::with_capacity(docs.len());
    for chunk in docs.chunks(EVAL_BATCH) {
        let refs: Vec<&PreparedDoc> = chunk.iter().collect();
        let tape = Tape::new();
        let v = FusedVars::from_vars(model, &bind_constants(&tape, model))?;
        let t = batch_terms(&v, &inputs(&refs), DEFAULT_ALPHA, Sampling::Deterministic)?;
        let lp = t.log_probs.value();
        let mut start = 0;
        for (i, _) in chunk.iter().enumerate() {
            let n = t.instance_doc[start..].iter().take_while(|&&d| d == i).count();
            let rows: Vec<Vec<f64>> = (start..start + n).map(|r| lp.row_slice(r).to_vec()).collect();
            out.push(aggregate_partitions(&rows).1);
            start += n;
        }
    }
    Ok(out)
}

/// Macro-F1 and per-class scores of `model` on `docs`.
pub fn evaluate(model: &FusedModel, docs: &[PreparedDoc]) -> Result<Evaluation, TrainError> {
    if docs.is_empty() {
        return Err(TrainError::Contract("cannot evaluate an empty split".into()));
    }
    let preds: Vec<usize> = document_log_probs(model, docs)?
        .iter()
        .map(|lp| crate::fusion::predict(lp))
        .collect();
    let gold: Vec<usize> = docs.iter().map(|d| d.label).collect();
    classification_scores(&gold, &preds, model.labels())
}

/// Fine-tunes encoder, head and (in topic-fused mode) the topic model on
/// the negative joint objective. Batches hold `cfg.batch` documents with
/// all their partitions, in an order shuffled from `seed` each epoch. The
/// parameters of the epoch with the best dev macro-F1 are returned.
pub fn finetune_joint(
    data: &Dataset,
    nvdm: Option<NvdmParams>,
    shape: &ModelShape,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(FusedModel, RunMetrics), TrainError> {
    cfg.validate()?;
    if data.p != cfg.p {
        return Err(TrainError::Contract(format!("data split into {} partitions, config says {}", data.p, cfg.p)));
    }
    let nvdm = match cfg.mode {
        Mode::TopicFused => Some(nvdm.ok_or_else(|| TrainError::Contract("topic-fused mode needs a topic model".into()))?),
        Mode::EncoderOnly => None,
        m => return Err(TrainError::Contract(format!("{m} is not a fine-tuning mode"))),
    };
    if data.train.is_empty() {
        return Err(TrainError::Contract("empty training split".into()));
    }
    let root = RngState::new(seed);
    let mut model = init_model(data, nvdm, shape, seed)?;
    let mut opt = Adam::new(&model, |name| {
        if NVDM_TENSOR_NAMES.contains(&name) {
            cfg.nvdm_lr
        } else {
            cfg.enc_lr
        }
    });
    let mut shuffle = root.derive(stream::SHUFFLE);
    let mut noise = root.derive(stream::NOISE);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut metrics = RunMetrics {
        run_id: run_id(cfg.mode, data.max_len, cfg.p),
        seed,
        mode: cfg.mode,
        p: cfg.p,
        epochs: Vec::new(),
        best_epoch: 0,
        dev_f1: f64::NEG_INFINITY,
        test: None,
        batches_per_epoch: data.train.len().div_ceil(cfg.batch),
    };
    let mut best = model.clone();

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        shuffle.shuffle(&mut order);
        let mut s = EpochStats {
            epoch,
            ..Default::default()
        };
        let mut instances = 0usize;
        for batch in order.chunks(cfg.batch) {
            let docs: Vec<&PreparedDoc> = batch.iter().map(|&i| &data.train[i]).collect();
            let tape = Tape::new();
            let vars = bind_params(&tape, &model);
            let v = FusedVars::from_vars(&model, &vars)?;
            let t = batch_terms(
                &v,
                &inputs(&docs),
                cfg.alpha,
                Sampling::Train {
                    rng: &mut noise,
                    samples: cfg.samples,
                    dropout: true,
                },
            )?;
            s.loss_joint += t.loss.item()? * t.instances as f64;
            s.loss_ce -= t.log_p_y_sum;
            s.elbo += t.elbo_sum;
            s.kld += t.kld_sum;
            s.attn_ops += t.ops.attention;
            s.topic_ops += t.topic_ops;
            instances += t.instances;
            tape.backward(t.loss)?;
            opt.step(&mut model, &collect_grads(&tape, &vars));
        }
        s.wall_s = start.elapsed().as_secs_f64();
        let n = instances as f64;
        s.loss_joint /= n;
        s.loss_ce /= n;
        s.elbo /= n;
        s.kld /= n;
        s.dev_f1 = if data.dev.is_empty() {
            0.0
        } else {
            evaluate(&model, &data.dev)?.macro_f1
        };
        if s.dev_f1 > metrics.dev_f1 {
            metrics.dev_f1 = s.dev_f1;
            metrics.best_epoch = epoch;
            best = model.clone();
        }
        metrics.epochs.push(s);
    }
    if !data.test.is_empty() {
        metrics.test = Some(evaluate(&best, &data.test)?);
    }
    Ok((best, metrics))
}
