use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use super::{Checkpoint, CliError, Config, Split};
use crate::corpus::{read_stopwords, read_tsv, Corpus, Document, SequenceVocab, Vocabulary};
use crate::costing::{cost_curve, curve_csv, pareto_csv, ComplexityInputs, ParetoPoint};
use crate::encoder::EncoderParams;
use crate::fusion::{FusedModel, FusionParams};
use crate::numkernel::RngState;
use crate::nvdm::{dominant_topic, encode, topic_report, topic_terms, EncodeMode, NvdmParams, NVDM_TENSOR_NAMES};
use crate::trainer::{
    document_log_probs, evaluate, finetune_joint, pretrain_nvdm, run_baseline, summarize, BaselineModel, DataSettings,
    Dataset, Evaluation, Logistic, MetricsRecord, Mode, PreparedDoc, RunMetrics,
};

const CONFIG_TEXT: &str = "config";
const VOCAB_TEXT: &str = "vocab";
const SEQ_VOCAB_TEXT: &str = "seq_vocab";
pub const NVDM_FILE: &str = "nvdm.tfus";
pub const TOPICS_FILE: &str = "topics.txt";

fn round_to(x: f64, decimals: i32) -> f64 {
    let f = 10f64.powi(decimals);
    (x * f).round() / f
}

fn write_file(path: &Path, content: &[u8]) -> Result<(), CliError> {
    fs::write(path, content).map_err(|e| CliError::io(path, e))
}

fn load_corpus(cfg: &Config) -> Result<Corpus, CliError> {
    let train = cfg
        .corpus_train
        .as_deref()
        .ok_or_else(|| CliError::Usage("corpus.train is not set".into()))?;
    let optional = |p: &Option<PathBuf>| p.as_deref().map(read_tsv).transpose().map(Option::unwrap_or_default);
    Ok(Corpus::new(read_tsv(train)?, optional(&cfg.corpus_dev)?, optional(&cfg.corpus_test)?)?)
}

fn settings(cfg: &Config) -> Result<DataSettings, CliError> {
    Ok(DataSettings {
        f_min: cfg.f_min,
        stopwords: cfg.corpus_stopwords.as_deref().map(read_stopwords).transpose()?.unwrap_or_default(),
        seq_min_count: 1,
        max_len: cfg.max_len,
        p: cfg.train.p,
    })
}

/// What a checkpoint holds.
#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Topic(NvdmParams),
    Fused(FusedModel),
    Baseline(BaselineModel),
}

impl Model {
    pub fn nvdm(&self) -> Option<&NvdmParams> {
        match self {
            Model::Topic(n) => Some(n),
            Model::Fused(m) => m.nvdm.as_ref(),
            Model::Baseline(b) => b.nvdm.as_ref(),
        }
    }

    /// Predicted labels of `docs`; `None` for a bare topic model.
    pub fn predict(&self, docs: &[PreparedDoc]) -> Result<Option<Vec<usize>>, CliError> {
        Ok(match self {
            Model::Topic(_) => None,
            Model::Fused(m) => Some(
                document_log_probs(m, docs)?
                    .iter()
                    .map(|lp| crate::fusion::predict(lp))
                    .collect(),
            ),
            Model::Baseline(b) => Some(b.predict(docs)?),
        })
    }
}

/// A checkpoint decoded into a model with the vocabularies and
/// configuration it was trained with.
#[derive(Clone, Debug)]
pub struct LoadedModel {
    pub model: Model,
    pub config: Config,
    pub vocab: Vocabulary,
    pub seq_vocab: Option<SequenceVocab>,
}

impl LoadedModel {
    fn dataset(&self, corpus: &Corpus) -> Result<Dataset, CliError> {
        let seq = self
            .seq_vocab
            .clone()
            .ok_or_else(|| CliError::Usage("checkpoint holds a topic model only".into()))?;
        Ok(Dataset::with_vocabularies(
            corpus,
            self.vocab.clone(),
            seq,
            self.config.max_len,
            self.config.train.p,
        )?)
    }
}

fn kernel(e: crate::numkernel::KernelError) -> CliError {
    CliError::Checkpoint(super::CheckpointError::Format(e.to_string()))
}

fn parse_vocab(text: &str, what: &str) -> Result<Vocabulary, CliError> {
    Vocabulary::parse(text, Path::new(what)).map_err(|e| CliError::Checkpoint(super::CheckpointError::Format(e.to_string())))
}

/// Reads a checkpoint written by `pretrain` or `train`.
pub fn load_model(path: &Path) -> Result<LoadedModel, CliError> {
    let ck = Checkpoint::load(path)?;
    let missing = |what: &str| CliError::Checkpoint(super::CheckpointError::Format(format!("no {what} text")));
    let config = Config::parse(ck.text(CONFIG_TEXT).ok_or_else(|| missing(CONFIG_TEXT))?, Path::new("/"))
        .map_err(|source| CliError::Config {
            path: path.to_path_buf(),
            source,
        })?;
    let vocab = parse_vocab(ck.text(VOCAB_TEXT).ok_or_else(|| missing(VOCAB_TEXT))?, VOCAB_TEXT)?;
    let seq_vocab = ck
        .text(SEQ_VOCAB_TEXT)
        .map(|t| parse_vocab(t, SEQ_VOCAB_TEXT).map(SequenceVocab::from_words))
        .transpose()?;
    let named = ck.tensors.clone();
    let nvdm = if ck.has_tensor(NVDM_TENSOR_NAMES[0]) {
        Some(NvdmParams::from_named(named.clone()).map_err(kernel)?)
    } else {
        None
    };
    let model = if ck.has_tensor("logistic.w") {
        let get = |name: &str| {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.clone())
                .ok_or_else(|| missing(name))
        };
        Model::Baseline(BaselineModel {
            encoder: EncoderParams::from_named(config.shape.enc_heads, named.clone()).map_err(kernel)?,
            nvdm,
            logistic: Logistic {
                w: get("logistic.w")?,
                c: get("logistic.c")?,
            },
        })
    } else if ck.has_tensor("fusion.p") {
        let m = FusedModel {
            nvdm,
            encoder: EncoderParams::from_named(config.shape.enc_heads, named.clone()).map_err(kernel)?,
            fusion: FusionParams::from_named(named).map_err(kernel)?,
        };
        m.validate().map_err(kernel)?;
        Model::Fused(m)
    } else {
        Model::Topic(nvdm.ok_or_else(|| missing("model tensor"))?)
    };
    if model.nvdm().is_some_and(|n| n.config().vocab_size != vocab.len()) {
        return Err(missing("matching vocabulary"));
    }
    Ok(LoadedModel {
        model,
        config,
        vocab,
        seq_vocab,
    })
}

/// A checkpoint of `params` carrying the configuration echo and the
/// vocabularies needed to read new documents.
pub fn model_checkpoint(
    params: &(impl crate::numkernel::Parameters + ?Sized),
    cfg: &Config,
    vocab: &Vocabulary,
    seq: Option<&SequenceVocab>,
) -> Checkpoint {
    Checkpoint {
        tensors: params.tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        texts: texts(cfg, vocab, seq),
    }
}

fn texts(cfg: &Config, vocab: &Vocabulary, seq: Option<&SequenceVocab>) -> Vec<(String, String)> {
    let mut t = vec![
        (CONFIG_TEXT.to_string(), cfg.to_text()),
        (VOCAB_TEXT.to_string(), vocab.to_file_string()),
    ];
    if let Some(s) = seq {
        t.push((SEQ_VOCAB_TEXT.to_string(), s.words().to_file_string()));
    }
    t
}

pub fn pretrain(cfg: &Config, out: &Path) -> Result<String, CliError> {
    let corpus = load_corpus(cfg)?;
    let data = Dataset::build(&corpus, &settings(cfg)?)?;
    let seed = cfg.train.seeds[0];
    let (params, report) = pretrain_nvdm(&data, &cfg.shape, &cfg.train, seed)?;
    let mut echo = cfg.clone();
    echo.train.seeds = vec![seed];
    model_checkpoint(&params, &echo, &data.vocab, None).save(&out.join(NVDM_FILE))?;
    let topics = topic_report(&params, &data.vocab);
    write_file(&out.join(TOPICS_FILE), topics.as_bytes())?;

    let mut text = format!("seed {seed}, Z={}, K={}\n", data.vocab.len(), cfg.shape.topics);
    for (e, elbo) in report.dev_elbo.iter().enumerate() {
        let _ = writeln!(text, "epoch {e}: dev elbo {elbo:.3}");
    }
    let _ = writeln!(text, "kept epoch {}", report.best_epoch);
    text.push_str(&topics);
    Ok(text)
}

/// Writes one JSON line per record, flushing after each.
fn write_metrics(path: &Path, records: &[MetricsRecord]) -> Result<(), CliError> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        let r = MetricsRecord {
            co2_g: round_to(r.co2_g, 2),
            ..r.clone()
        };
        let line = serde_json::to_string(&r).expect("records serialize");
        writeln!(w, "{line}")
            .and_then(|_| w.flush())
            .map_err(|e| CliError::io(path, e))?;
    }
    Ok(())
}

pub fn train(cfg: &Config, nvdm: Option<&Path>, reference_f1: Option<f64>, out: &Path) -> Result<String, CliError> {
    let mode = cfg.train.mode;
    if mode == Mode::NvdmPretrain {
        return Err(CliError::Usage("mode nvdm_pretrain is run by the pretrain command".into()));
    }
    let corpus = load_corpus(cfg)?;
    let topic = if mode.uses_topics() {
        let path = nvdm.ok_or_else(|| CliError::Usage(format!("mode {mode} needs --nvdm")))?;
        let loaded = load_model(path)?;
        let Model::Topic(params) = loaded.model else {
            return Err(CliError::Usage(format!("{} is not a topic-model checkpoint", path.display())));
        };
        Some((params, loaded.vocab))
    } else {
        None
    };
    let data = match &topic {
        Some((_, vocab)) => Dataset::with_vocabularies(
            &corpus,
            vocab.clone(),
            SequenceVocab::build(&corpus.train, 1),
            cfg.max_len,
            cfg.train.p,
        )?,
        None => Dataset::build(&corpus, &settings(cfg)?)?,
    };

    let mut runs: Vec<RunMetrics> = Vec::new();
    let mut text = String::new();
    for &seed in &cfg.train.seeds {
        let nv = topic.as_ref().map(|(p, _)| p.clone());
        let (checkpoint_params, metrics): (Box<dyn crate::numkernel::Parameters>, RunMetrics) = match mode {
            Mode::TopicFused | Mode::EncoderOnly => {
                let (m, r) = finetune_joint(&data, nv, &cfg.shape, &cfg.train, seed)?;
                (Box::new(m), r)
            }
            _ => {
                let (m, r) = run_baseline(&data, mode, nv.as_ref(), &cfg.shape, &cfg.train, seed)?;
                (Box::new(m), r)
            }
        };
        let stem = format!("{}-seed{seed}", metrics.run_id);
        let mut echo = cfg.clone();
        echo.train.seeds = vec![seed];
        model_checkpoint(checkpoint_params.as_ref(), &echo, &data.vocab, Some(&data.seq_vocab))
            .save(&out.join(format!("{stem}.tfus")))?;
        write_metrics(&out.join(format!("{stem}.jsonl")), &metrics.records())?;
        let _ = writeln!(
            text,
            "{stem}: best epoch {}, dev {:.3}, test {:.3}, {:.3} h",
            metrics.best_epoch,
            metrics.dev_f1,
            metrics.test_f1(),
            metrics.wall_s() / 3600.0
        );
        runs.push(metrics);
    }
    let mut s = summarize(&runs, reference_f1)?;
    s.t_epoch_h = round_to(s.t_epoch_h, 3);
    s.t_h = round_to(s.t_h, 3);
    s.co2_g = round_to(s.co2_g, 2);
    let path = out.join(format!("{}-summary.json", s.run_id));
    write_file(&path, format!("{}\n", serde_json::to_string(&s).expect("summary serializes")).as_bytes())?;
    let spread = if s.test_f1.single {
        "n/a".to_string()
    } else {
        format!("{:.3}", s.test_f1.std)
    };
    let _ = writeln!(
        text,
        "{}: test F1 {:.3} ± {spread} over {} seeds, {:.3} h, {:.2} g CO2",
        s.run_id,
        s.test_f1.mean,
        s.seeds.len(),
        s.t_h,
        s.co2_g
    );
    if let Some(r) = s.rtn {
        let _ = writeln!(text, "retention {r:.1}%");
    }
    Ok(text)
}

fn describe(split: Split, e: &Evaluation) -> String {
    let mut text = format!("split {split:?}\nmacro_f1 {:.3}\n", e.macro_f1).to_lowercase();
    for (c, s) in e.per_class.iter().enumerate() {
        let _ = writeln!(
            text,
            "class {c}: precision {:.3} recall {:.3} f1 {:.3} support {}",
            s.precision, s.recall, s.f1, s.support
        );
    }
    text
}

/// Scores a checkpoint on a split of its own corpus, or of `config`'s.
pub fn eval(model: &Path, split: Split, config: Option<&Config>) -> Result<String, CliError> {
    let loaded = load_model(model)?;
    let corpus = load_corpus(config.unwrap_or(&loaded.config))?;
    let data = loaded.dataset(&corpus)?;
    let docs = match split {
        Split::Train => &data.train,
        Split::Dev => &data.dev,
        Split::Test => &data.test,
    };
    let e = match &loaded.model {
        Model::Fused(m) => evaluate(m, docs)?,
        Model::Baseline(b) => b.evaluate(docs)?,
        Model::Topic(_) => return Err(CliError::Usage("checkpoint holds a topic model only".into())),
    };
    Ok(describe(split, &e))
}

/// Predicted label, then the dominant topic and its `top_m` terms (or
/// `topic: none` when the document has no topic-vocabulary word or the
/// model no topic component).
pub fn explain(model: &Path, doc: &Path, top_m: usize) -> Result<String, CliError> {
    let loaded = load_model(model)?;
    let content = fs::read_to_string(doc).map_err(|e| CliError::io(doc, e))?;
    let name = doc.file_name().map_or("doc".into(), |n| n.to_string_lossy().into_owned());
    let seq = loaded
        .seq_vocab
        .as_ref()
        .ok_or_else(|| CliError::Usage("checkpoint holds a topic model only".into()))?;
    let prepared = PreparedDoc::new(
        &Document::new(name, 0, content),
        &loaded.vocab,
        seq,
        loaded.config.max_len,
        loaded.config.train.p,
    )?;
    let label = loaded
        .model
        .predict(std::slice::from_ref(&prepared))?
        .and_then(|v| v.first().copied())
        .expect("classifier checkpoints predict");
    let mut text = format!("label: {label}\n");
    if top_m == 0 {
        return Ok(text);
    }
    match loaded.model.nvdm() {
        Some(params) if !prepared.bow.is_empty() => {
            let state = encode(&prepared.bow, params, &mut RngState::new(0), EncodeMode::Deterministic)
                .map_err(|e| CliError::Train(e.into()))?;
            let k = dominant_topic(&state);
            let _ = writeln!(text, "topic: {k}");
            for (word, w) in topic_terms(params, &loaded.vocab, k, top_m) {
                let _ = writeln!(text, "{word}\t{w:.4}");
            }
        }
        _ => text.push_str("topic: none\n"),
    }
    Ok(text)
}

pub const PROFILE_FILE: &str = "profile.csv";

pub fn profile(
    cfg: &Config,
    lengths: &[u64],
    batches: u64,
    vocab_size: u64,
    seconds_per_op: f64,
    out: &Path,
) -> Result<String, CliError> {
    let mut base = ComplexityInputs::new(
        cfg.train.batch as u64,
        cfg.max_len as u64,
        cfg.train.p as u64,
        cfg.shape.enc_hidden as u64,
        cfg.shape.enc_layers as u64,
        batches,
        cfg.shape.topics as u64,
        vocab_size,
    )?;
    base.heads = cfg.shape.enc_heads as u64;
    if lengths.is_empty() {
        return Err(CliError::Usage("no lengths given".into()));
    }
    let csv = curve_csv(&cost_curve(lengths, &base, seconds_per_op)?);
    write_file(&out.join(PROFILE_FILE), csv.as_bytes())?;
    Ok(csv)
}

/// Every record of a metrics stream; a malformed line is reported with its
/// number.
pub fn read_metrics(path: &Path) -> Result<Vec<MetricsRecord>, CliError> {
    let content = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    content
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| CliError::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub const PARETO_FILE: &str = "pareto.csv";

/// One point per run label: the mean test F1 and mean hours of its final
/// records across files.
pub fn pareto(files: &[PathBuf], out: &Path) -> Result<String, CliError> {
    let mut runs: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    let mut order: Vec<String> = Vec::new();
    for f in files {
        for r in read_metrics(f)? {
            if let Some(f1) = r.test_f1 {
                if !runs.contains_key(&r.run_id) {
                    order.push(r.run_id.clone());
                }
                runs.entry(r.run_id).or_default().push((f1, r.wall_s / 3600.0));
            }
        }
    }
    if order.is_empty() {
        return Err(CliError::Usage("no final records (with test_f1) in the given files".into()));
    }
    let points: Vec<ParetoPoint> = order
        .iter()
        .map(|label| {
            let v = &runs[label];
            let n = v.len() as f64;
            ParetoPoint::new(
                label.clone(),
                v.iter().map(|x| x.0).sum::<f64>() / n,
                v.iter().map(|x| x.1).sum::<f64>() / n,
            )
        })
        .collect();
    let csv = pareto_csv(&points)?;
    write_file(&out.join(PARETO_FILE), csv.as_bytes())?;
    Ok(csv)
}
