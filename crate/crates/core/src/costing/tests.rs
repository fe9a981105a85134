use approx::assert_abs_diff_eq;
use proptest::prelude::*;

use super::*;
use crate::numkernel::RngState;

fn bert_base(p: u64) -> ComplexityInputs {
    ComplexityInputs::new(4, 512, p, 768, 12, 100, 100, 4813).unwrap()
}

#[test]
fn batch_examples() {
    assert_eq!(predict_ops_batch(&bert_base(1), false).unwrap(), 9_663_676_416);
    assert_eq!(predict_ops_batch(&bert_base(2), true).unwrap(), 2_417_844_304);
    assert_eq!(
        predict_ops_batch(&bert_base(1), true).unwrap(),
        9_663_676_416 + 4 * 100 * 4813
    );
}

#[test]
fn epoch_hand_evaluation() {
    let c = bert_base(4);
    // b K Z n_b + b N² H n_b n_l / p
    let hand: u128 = 4 * 100 * 4813 * 100 + 4 * 512 * 512 * 768 * 100 * 12 / 4;
    assert_eq!(predict_ops_epoch(&c, true).unwrap(), hand);
    assert_eq!(predict_ops_epoch(&c, false).unwrap(), 966_367_641_600);
    assert_eq!(c.attention_ops_epoch(false), 4 * c.attention_ops_epoch(true));
}

#[test]
fn topic_term_is_small_at_full_scale() {
    // Reuters8 (Z = 4813), 20NS-sized vocabularies and the Table 5 grid.
    for z in [4813, 10_000, 20_000] {
        for p in [2, 4, 8] {
            for b in [4, 8, 16] {
                let c = ComplexityInputs::new(b, 512, p, 768, 12, 100, 100, z).unwrap();
                let topic = c.topic_ops_batch() * u128::from(c.batches) * u128::from(p);
                assert!(topic < c.attention_ops_epoch(true), "z={z} p={p} b={b}");
            }
        }
    }
}

#[test]
fn input_validation() {
    assert!(ComplexityInputs::new(4, 510, 4, 8, 1, 1, 1, 1).is_err());
    assert!(ComplexityInputs::new(0, 512, 4, 8, 1, 1, 1, 1).is_err());
    let mut c = bert_base(2);
    c.x = 100;
    assert!(predict_ops_batch(&c, true).is_err());
}

#[test]
fn co2_examples() {
    assert_abs_diff_eq!(co2_grams(3.123).unwrap(), 133.35, epsilon = 0.005);
    assert!((co2_grams(3.123).unwrap() - 133.34).abs() <= 0.02);
    assert_eq!(co2_grams(0.0).unwrap(), 0.0);
    assert!(co2_grams(-1.0).is_err());
    assert!(co2_grams(f64::NAN).is_err());

    let kg = co2_grams(5532.0 * 4.0 * 5.0 * 12.0).unwrap() / 1000.0;
    assert_abs_diff_eq!(kg, 56_691.9, epsilon = 0.05);
    let lbs = kg * LBS_PER_KG;
    assert!((lbs - 124_985.0).abs() / 124_985.0 < 1e-3, "{lbs}");
}

#[test]
fn co2_is_linear() {
    let mut rng = RngState::new(3);
    for _ in 0..100 {
        let t = rng.next_uniform() * 50.0;
        assert_eq!(co2_grams(2.0 * t).unwrap(), 2.0 * co2_grams(t).unwrap());
    }
}

#[test]
fn cost_report_fields() {
    let r = CostReport::new(bert_base(2), 7, 1.0).unwrap();
    assert_eq!(r.partitioned_batch_ops, 2_417_844_304);
    assert_eq!(r.reference_batch_ops, 9_663_676_416);
    assert_abs_diff_eq!(r.co2_g, 42.7, epsilon = 1e-9);
}

#[test]
fn curve_is_quadratic_and_monotone() {
    let base = ComplexityInputs {
        heads: 12,
        ..bert_base(1)
    };
    let lengths = [32, 64, 128, 256, 512];
    let curve = cost_curve(&lengths, &base, 1e-9).unwrap();
    assert_eq!(curve.len(), 5);
    for w in curve.windows(2) {
        assert!(w[1].hours > w[0].hours);
        assert_eq!(w[1].attention_ops, 4 * w[0].attention_ops);
        assert_eq!(w[1].memory_entries, 4 * w[0].memory_entries);
        assert_abs_diff_eq!(w[1].attention_hours, 4.0 * w[0].attention_hours, epsilon = 1e-12);
    }
    assert_eq!(curve[4].memory_entries, 4 * 512 * 512 * 12 * 12);
    let csv = curve_csv(&curve);
    assert_eq!(csv.lines().count(), 6);
    assert!(csv.starts_with(CURVE_CSV_HEADER));

    let split = cost_curve(&lengths, &bert_base(2), 1e-9).unwrap();
    assert_eq!(split[4].total_ops, predict_ops_epoch(&bert_base(2), true).unwrap());
    assert!(cost_curve(&[33], &bert_base(2), 1e-9).is_err());
    assert!(cost_curve(&[32], &base, 0.0).is_err());
}

/// Reuters8 rows of the results table: (label, F1, total fine-tuning hours).
const REUTERS8: [(&str, f64, f64); 9] = [
    ("CNN", 0.852, 0.340),
    ("BERT-Avg", 0.882, 0.010),
    ("BERT-Avg+DTR", 0.867, 0.015),
    ("DistilBERT", 0.934, 1.938),
    ("BERT-512", 0.935, 3.123),
    ("TopicBERT-512", 0.950, 3.183),
    ("TopicBERT-256", 0.942, 1.870),
    ("TopicBERT-128", 0.928, 1.610),
    ("TopicBERT-64", 0.921, 1.956),
];

#[test]
fn reuters8_frontier() {
    let pts: Vec<ParetoPoint> = REUTERS8.iter().map(|&(l, f, t)| ParetoPoint::new(l, f, t)).collect();
    let front = pareto_frontier(&pts).unwrap();
    let labels: Vec<&str> = front.iter().map(|p| p.label.as_str()).collect();
    assert_eq!(labels, ["BERT-Avg", "TopicBERT-128", "TopicBERT-256", "TopicBERT-512"]);
    assert!(pts[6].dominates(&pts[4]));
    let csv = pareto_csv(&pts).unwrap();
    assert!(csv.contains("BERT-512,0.935,3.123,133.35,0"));
    assert!(csv.contains("TopicBERT-256,0.942,1.870,79.85,1"));
}

#[test]
fn small_frontiers() {
    let one = [ParetoPoint::new("a", 0.5, 2.0)];
    assert_eq!(pareto_frontier(&one).unwrap(), one);
    let two = [ParetoPoint::new("a", 0.9, 1.0), ParetoPoint::new("b", 0.8, 2.0)];
    assert_eq!(pareto_frontier(&two).unwrap(), &two[..1]);
    let dup = [ParetoPoint::new("a", 0.9, 1.0), ParetoPoint::new("b", 0.9, 1.0)];
    assert_eq!(pareto_frontier(&dup).unwrap().len(), 2);
    assert!(pareto_frontier(&[]).is_err());
    assert!(pareto_frontier(&[ParetoPoint::new("n", f64::NAN, 1.0)]).is_err());
}

fn points_strategy() -> impl Strategy<Value = Vec<ParetoPoint>> {
    // Coarse grids make ties on either axis common.
    prop::collection::vec((0u8..12, 0u8..12), 1..40).prop_map(|v| {
        v.into_iter()
            .enumerate()
            .map(|(i, (f, c))| ParetoPoint::new(format!("p{i}"), f64::from(f) / 11.0, 1.0 + f64::from(c)))
            .collect()
    })
}

proptest! {
    #[test]
    fn frontier_matches_brute_force(pts in points_strategy()) {
        let fast = pareto_frontier(&pts).unwrap();
        prop_assert_eq!(&fast, &brute_force_frontier(&pts).unwrap());
        for a in &fast {
            prop_assert!(!fast.iter().any(|b| b.dominates(a)));
        }
        for p in &pts {
            if !fast.contains(p) {
                prop_assert!(fast.iter().any(|f| f.dominates(p)));
            }
        }
    }

    #[test]
    fn partitioning_laws(
        b in 1u64..64, x in 1u64..256, pi in 0usize..4, h in 1u64..1024,
        l in 1u64..24, nb in 1u64..1000, k in 1u64..200, z in 1u64..50_000,
    ) {
        let p = [1, 2, 4, 8][pi];
        let c = ComplexityInputs::new(b, x * p, p, h, l, nb, k, z).unwrap();
        let reference = predict_ops_batch(&c, false).unwrap();
        prop_assert_eq!(predict_ops_batch(&c, true).unwrap() - c.topic_ops_batch(), reference / u128::from(p * p));
        prop_assert_eq!(c.attention_ops_batch(true) * u128::from(p * p), reference);
        prop_assert_eq!(c.attention_ops_epoch(true) * u128::from(p), c.attention_ops_epoch(false));
        let at_one = ComplexityInputs::new(b, x * p, 1, h, l, nb, k, z).unwrap();
        prop_assert_eq!(
            predict_ops_batch(&at_one, true).unwrap() - predict_ops_batch(&at_one, false).unwrap(),
            u128::from(b * k * z)
        );
    }
}
