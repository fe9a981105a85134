use std::collections::HashMap;

use topicfuse::corpus::synthetic::two_clusters;
use topicfuse::corpus::{Corpus, Document};
use topicfuse::costing::{predict_ops_epoch, ComplexityInputs};
use topicfuse::fusion::FusedModel;
use topicfuse::numkernel::{Parameters, RngState, Tensor};
use topicfuse::nvdm::{self, dominant_topic, encode, top_word_ids, EncodeMode};
use topicfuse::trainer::*;

/// Twelve words per cluster, so a pure top-ten list is possible.
fn clusters(n: usize, seed: u64) -> Corpus {
    let docs = two_clusters(n, 12, 30, seed);
    let (train, rest) = docs.split_at(n * 3 / 5);
    let (dev, test) = rest.split_at(rest.len() / 2);
    Corpus::new(train.to_vec(), dev.to_vec(), test.to_vec()).unwrap()
}

fn dataset(corpus: &Corpus, max_len: usize, p: usize) -> Dataset {
    Dataset::build(
        corpus,
        &DataSettings {
            f_min: 1,
            seq_min_count: 1,
            max_len,
            p,
            ..Default::default()
        },
    )
    .unwrap()
}

fn shape(topics: usize) -> ModelShape {
    ModelShape {
        topics,
        nvdm_hidden: 16,
        enc_layers: 1,
        enc_hidden: 8,
        enc_heads: 2,
    }
}

fn cfg(epochs: usize, p: usize, mode: Mode) -> TrainConfig {
    TrainConfig {
        epochs,
        batch: 8,
        p,
        mode,
        samples: 1,
        nvdm_lr: 3e-3,
        enc_lr: 1e-3,
        ..Default::default()
    }
}

// The latent is signed, so with very few topics one direction can carry both
// clusters; eight leaves room for one positive direction each.
#[test]
fn pretraining_separates_two_clusters() {
    let data = dataset(&clusters(300, 1), 32, 1);
    let (params, report) = pretrain_nvdm(&data, &shape(8), &cfg(15, 1, Mode::NvdmPretrain), 1).unwrap();
    assert!(report.dev_elbo[report.best_epoch] >= report.dev_elbo[1]);

    let mut uses: HashMap<usize, usize> = HashMap::new();
    let mut rng = RngState::new(0);
    for d in &data.train {
        let s = encode(&d.bow, &params, &mut rng, EncodeMode::Deterministic).unwrap();
        *uses.entry(dominant_topic(&s)).or_default() += 1;
    }
    let mut ranked: Vec<(usize, usize)> = uses.into_iter().collect();
    ranked.sort_by_key(|&(k, n)| (std::cmp::Reverse(n), k));
    assert!(ranked.len() >= 2, "{ranked:?}");

    let cluster_of = |id: usize| data.vocab.word(id).unwrap().as_bytes()[0];
    let mut majorities = Vec::new();
    for &(k, _) in &ranked[..2] {
        let words = top_word_ids(&params, k, 10);
        let a = words.iter().filter(|&&(w, _)| cluster_of(w) == b'a').count();
        let majority = a.max(words.len() - a);
        let purity = majority as f64 / words.len() as f64;
        assert!(purity >= 0.9, "topic {k} purity {purity}");
        majorities.push(a * 2 > words.len());
    }
    assert_ne!(majorities[0], majorities[1]);
}

#[test]
fn zero_epochs_return_the_initialization() {
    let data = dataset(&clusters(40, 2), 16, 1);
    let c = TrainConfig {
        epochs: 0,
        ..cfg(1, 1, Mode::NvdmPretrain)
    };
    let (a, report) = pretrain_nvdm(&data, &shape(3), &c, 9).unwrap();
    let (b, _) = pretrain_nvdm(&data, &shape(3), &c, 9).unwrap();
    assert_eq!(a, b);
    assert_eq!(report.best_epoch, 0);
    assert_eq!(report.dev_elbo.len(), 1);
}

#[test]
fn all_empty_bags_are_a_corpus_error() {
    let train = vec![Document::new("a", 0, "x y"), Document::new("b", 1, "y x")];
    let corpus = Corpus::new(train, vec![], vec![]).unwrap();
    let mut data = dataset(&corpus, 8, 1);
    for d in &mut data.train {
        d.bow = topicfuse::corpus::BowVector::from_counts([]);
    }
    let err = pretrain_nvdm(&data, &shape(2), &cfg(1, 1, Mode::NvdmPretrain), 1).unwrap_err();
    assert!(matches!(err, TrainError::Corpus(_)), "{err}");
}

#[test]
fn separable_corpus_is_learned() {
    let data = dataset(&clusters(120, 3), 16, 2);
    let c = cfg(15, 2, Mode::TopicFused);
    let (nv, _) = pretrain_nvdm(&data, &shape(4), &c, 1).unwrap();
    let (model, m) = finetune_joint(&data, Some(nv), &shape(4), &c, 1).unwrap();
    assert_eq!(evaluate(&model, &data.train).unwrap().macro_f1, 1.0);
    assert!(m.best_epoch >= 1 && m.best_epoch <= 15);
    assert_eq!(m.run_id, "topicfused-8");
}

#[test]
fn zero_learning_rates_keep_parameters() {
    let data = dataset(&clusters(30, 4), 16, 2);
    let c = TrainConfig {
        nvdm_lr: 0.0,
        enc_lr: 0.0,
        ..cfg(2, 2, Mode::TopicFused)
    };
    let nv = nvdm::NvdmParams::init(
        nvdm::NvdmConfig {
            vocab_size: data.vocab.len(),
            hidden: 16,
            topics: 3,
        },
        &mut RngState::new(5),
    );
    let init = init_model(&data, Some(nv.clone()), &shape(3), 11).unwrap();
    let (trained, _) = finetune_joint(&data, Some(nv), &shape(3), &c, 11).unwrap();
    assert_eq!(trained, init);
}

fn without_wall_time(mut m: RunMetrics) -> RunMetrics {
    for e in &mut m.epochs {
        e.wall_s = 0.0;
    }
    m
}

#[test]
fn same_seed_same_run() {
    let data = dataset(&clusters(40, 5), 16, 2);
    let c = cfg(2, 2, Mode::TopicFused);
    let run = |seed| {
        let (nv, _) = pretrain_nvdm(&data, &shape(3), &c, seed).unwrap();
        let (model, m) = finetune_joint(&data, Some(nv), &shape(3), &c, seed).unwrap();
        (model, without_wall_time(m))
    };
    let (a, ma) = run(1);
    let (b, mb) = run(1);
    assert_eq!(a, b);
    assert_eq!(ma, mb);
    let (c2, _) = run(2);
    assert_ne!(a, c2);
}

/// Documents of exactly `p * (x - 1)` content tokens, so every one fills its
/// partitions with no overlap.
fn full_length_corpus(docs: usize, len: usize, seed: u64) -> Corpus {
    let mut rng = RngState::new(seed);
    let make = |rng: &mut RngState, i: usize| {
        let text: Vec<String> = (0..len).map(|_| format!("t{}", rng.next_below(6))).collect();
        Document::new(format!("d{i}"), i % 2, text.join(" "))
    };
    let train = (0..docs).map(|i| make(&mut rng, i)).collect();
    Corpus::new(train, vec![make(&mut rng, 0)], vec![]).unwrap()
}

#[test]
fn measured_attention_matches_prediction() {
    for (p, b, docs) in [(1, 2, 6), (2, 3, 6), (4, 2, 8)] {
        let max_len = 32;
        let corpus = full_length_corpus(docs, p * (max_len / p - 1), 7);
        let data = dataset(&corpus, max_len, p);
        assert!(data.train.iter().all(|d| !d.parts.has_partial_final_window() && d.parts.partitions.len() == p));
        let c = TrainConfig {
            batch: b,
            ..cfg(1, p, Mode::TopicFused)
        };
        let s = shape(3);
        let (nv, _) = pretrain_nvdm(&data, &s, &TrainConfig { epochs: 0, ..c.clone() }, 1).unwrap();
        let (_, m) = finetune_joint(&data, Some(nv), &s, &c, 1).unwrap();
        let inputs = ComplexityInputs::new(
            b as u64,
            max_len as u64,
            p as u64,
            8,
            1,
            (docs / b) as u64,
            3,
            data.vocab.len() as u64,
        )
        .unwrap();
        let e = &m.epochs[0];
        assert_eq!(u128::from(e.attn_ops), inputs.attention_ops_epoch(true), "p={p}");
        assert_eq!(
            u128::from(e.attn_ops + e.topic_ops),
            predict_ops_epoch(&inputs, true).unwrap(),
            "p={p}"
        );
    }
}

#[test]
fn two_partitions_halve_attention() {
    let corpus = full_length_corpus(6, 30, 8);
    let one = dataset(&corpus, 32, 1);
    let two = one.repartitioned(2).unwrap();
    let ops = |data: &Dataset, p| {
        let (_, m) = finetune_joint(data, None, &shape(3), &cfg(1, p, Mode::EncoderOnly), 1).unwrap();
        m.epochs[0].attn_ops
    };
    assert_eq!(ops(&one, 1), 2 * ops(&two, 2));
}

#[test]
fn baselines() {
    let data = dataset(&clusters(80, 6), 16, 1);
    let s = shape(3);
    let c = cfg(15, 1, Mode::BertAvg);
    let (nv, _) = pretrain_nvdm(&data, &s, &cfg(3, 1, Mode::NvdmPretrain), 1).unwrap();

    let (avg, m) = run_baseline(&data, Mode::BertAvg, None, &s, &c, 1).unwrap();
    assert_eq!(avg.logistic.w.shape(), [8, 2]);
    assert!(m.test.is_some());
    let (dtr, _) = run_baseline(&data, Mode::BertAvgDtr, Some(&nv), &s, &c, 1).unwrap();
    assert_eq!(dtr.logistic.w.shape(), [8 + 3, 2]);
    assert!(run_baseline(&data, Mode::BertAvgDtr, None, &s, &c, 1).is_err());

    // A topic block of zeros leaves the initial loss unchanged.
    let mut silent = nv.clone();
    for (name, t) in silent.tensors_mut() {
        if name.starts_with("l1.") {
            *t = Tensor::zeros(t.shape());
        }
    }
    let enc = init_model(&data, None, &ModelShape { enc_layers: 1, ..s }, 1).unwrap().encoder;
    let plain = baseline_features(&data.train, &enc, None).unwrap();
    let padded = baseline_features(&data.train, &enc, Some(&silent)).unwrap();
    let y: Vec<usize> = data.train.iter().map(|d| d.label).collect();
    assert_eq!(
        Logistic::zeros(8, 2).loss(&plain, &y).unwrap(),
        Logistic::zeros(11, 2).loss(&padded, &y).unwrap()
    );
}

#[test]
fn logistic_fits_separable_features() {
    let corpus = clusters(60, 9);
    let data = dataset(&corpus, 16, 1);
    let (nv, _) = pretrain_nvdm(&data, &shape(4), &cfg(10, 1, Mode::NvdmPretrain), 1).unwrap();
    let (model, _) = run_baseline(&data, Mode::BertAvgDtr, Some(&nv), &shape(4), &cfg(30, 1, Mode::BertAvgDtr), 1).unwrap();
    let enc = topicfuse::encoder::EncoderParams::init(
        topicfuse::encoder::EncoderConfig {
            vocab_size: data.seq_vocab.len(),
            max_len: 16,
            hidden: 8,
            layers: 1,
            heads: 2,
        },
        &mut RngState::new(1).derive(2),
    )
    .unwrap();
    let x = baseline_features(&data.train, &enc, Some(&nv)).unwrap();
    let y: Vec<usize> = data.train.iter().map(|d| d.label).collect();
    assert_eq!(model.encoder, enc);
    let acc = model.logistic.predict(&x).unwrap().iter().zip(&y).filter(|(a, b)| a == b).count();
    assert_eq!(acc, y.len());
}

#[test]
fn metrics_stream_and_summary() {
    let data = dataset(&clusters(40, 10), 16, 2);
    let c = cfg(2, 2, Mode::EncoderOnly);
    let runs: Vec<RunMetrics> = [1, 2, 3]
        .iter()
        .map(|&s| finetune_joint(&data, None, &shape(3), &c, s).unwrap().1)
        .collect();
    let recs = runs[0].records();
    assert_eq!(recs.len(), 3);
    assert!(recs[..2].iter().all(|r| r.test_f1.is_none()));
    assert_eq!(recs[2].test_f1, Some(runs[0].test_f1()));
    assert_eq!(recs[2].attn_ops, runs[0].attn_ops());
    let line = serde_json::to_string(&recs[0]).unwrap();
    for key in [
        "run_id", "seed", "mode", "p", "epoch", "loss_joint", "loss_ce", "elbo", "kld", "dev_f1", "test_f1", "wall_s",
        "attn_ops", "co2_g",
    ] {
        assert!(line.contains(&format!("\"{key}\":")), "{key}");
    }
    let s = summarize(&runs, Some(runs[0].test_f1())).unwrap();
    assert_eq!(s.seeds, [1, 2, 3]);
    assert!(!s.test_f1.single);
    let own = summarize(&runs[..1], Some(runs[0].test_f1())).unwrap();
    assert_eq!(own.rtn, Some(100.0));
    assert!(own.test_f1.single);
}

#[test]
fn document_scores_average_partitions() {
    let data = dataset(&clusters(20, 11), 16, 2);
    let model: FusedModel = init_model(&data, None, &shape(3), 3).unwrap();
    let lp = document_log_probs(&model, &data.dev).unwrap();
    assert_eq!(lp.len(), data.dev.len());
    for row in &lp {
        let total: f64 = row.iter().map(|v| v.exp()).sum();
        assert!(total <= 1.0 + 1e-12);
    }
    assert!(evaluate(&model, &[]).is_err());
    assert_eq!("encoder_only".parse::<Mode>().unwrap(), Mode::EncoderOnly);
    assert!("bert".parse::<Mode>().is_err());
    assert_eq!(run_id(Mode::TopicFused, 512, 2), "topicfused-256");
}

