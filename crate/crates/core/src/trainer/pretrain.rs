use super::{stream, Dataset, ModelShape, PreparedDoc, TrainConfig, TrainError};
use crate::corpus::{BowVector, CorpusError};
use crate::numkernel::{bind_params, collect_grads, RngState, Tape};
use crate::nvdm::{count_matrix, draw_noise, forward, NvdmConfig, NvdmParams, NvdmVars};

use super::Adam;

/// Mean dev ELBO after each epoch (index 0 is the initialization) and the
/// epoch whose parameters were kept.
#[derive(Clone, Debug, PartialEq)]
pub struct PretrainReport {
    pub dev_elbo: Vec<f64>,
    pub best_epoch: usize,
}

fn nonempty(docs: &[PreparedDoc]) -> Vec<&BowVector> {
    docs.iter().map(|d| &d.bow).filter(|b| !b.is_empty()).collect()
}

/// Mean ELBO of `bows` with noise drawn from a fixed stream, so values from
/// different epochs are comparable.
pub fn dev_elbo(params: &NvdmParams, bows: &[&BowVector], samples: usize, rng: RngState) -> Result<f64, TrainError> {
    if bows.is_empty() {
        return Ok(0.0);
    }
    let mut rng = rng;
    let z = params.config().vocab_size;
    let mut total = 0.0;
    for chunk in bows.chunks(64) {
        let tape = Tape::new();
        let v = NvdmVars::bind(&tape, params);
        let noise = draw_noise(&mut rng, chunk.len(), params.config().topics, samples);
        let f = forward(&v, &count_matrix(chunk, z), Some(&noise))?;
        total += f.elbo.sum().item()?;
    }
    Ok(total / bows.len() as f64)
}

/// Maximizes the mean ELBO of the training bags of words by mini-batch
/// Adam and keeps the epoch with the best dev ELBO. Documents with an empty
/// bag of words are skipped. With zero epochs the initialization is
/// returned.
pub fn pretrain_nvdm(
    data: &Dataset,
    shape: &ModelShape,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(NvdmParams, PretrainReport), TrainError> {
    if cfg.batch == 0 || cfg.samples == 0 {
        return Err(TrainError::Contract("batch size and samples must be positive".into()));
    }
    let train = nonempty(&data.train);
    if train.is_empty() {
        return Err(CorpusError::AllBowEmpty.into());
    }
    let dev = {
        let d = nonempty(&data.dev);
        if d.is_empty() {
            train.clone()
        } else {
            d
        }
    };
    let root = RngState::new(seed);
    let nvdm_cfg = NvdmConfig {
        vocab_size: data.vocab.len(),
        hidden: shape.nvdm_hidden,
        topics: shape.topics,
    };
    let mut params = NvdmParams::init(nvdm_cfg, &mut root.derive(stream::NVDM_INIT));
    let dev_rng = root.derive(stream::DEV_NOISE);
    let mut report = PretrainReport {
        dev_elbo: vec![dev_elbo(&params, &dev, cfg.samples, dev_rng)?],
        best_epoch: 0,
    };
    let mut best = params.clone();
    let mut opt = Adam::new(&params, |_| cfg.nvdm_lr);
    let mut shuffle = root.derive(stream::SHUFFLE);
    let mut noise_rng = root.derive(stream::NOISE);
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.epochs {
        shuffle.shuffle(&mut order);
        for batch in order.chunks(cfg.batch) {
            let bows: Vec<&BowVector> = batch.iter().map(|&i| train[i]).collect();
            let tape = Tape::new();
            let vars = bind_params(&tape, &params);
            let v = NvdmVars::from_vars(&vars)?;
            let noise = draw_noise(&mut noise_rng, bows.len(), nvdm_cfg.topics, cfg.samples);
            let f = forward(&v, &count_matrix(&bows, nvdm_cfg.vocab_size), Some(&noise))?;
            let loss = f.elbo.sum().scale(-1.0 / bows.len() as f64);
            tape.backward(loss)?;
            opt.step(&mut params, &collect_grads(&tape, &vars));
        }
        let e = dev_elbo(&params, &dev, cfg.samples, dev_rng)?;
        if report.best_epoch == 0 || e > report.dev_elbo[report.best_epoch] {
            report.best_epoch = epoch;
            best = params.clone();
        }
        report.dev_elbo.push(e);
    }
    Ok((best, report))
}
