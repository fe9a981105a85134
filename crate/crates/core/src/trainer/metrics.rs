use serde::{Deserialize, Serialize};

use super::{Mode, TrainError};
use crate::costing::co2_grams;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub support: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    /// Unweighted mean of the per-class F1 scores.
    pub macro_f1: f64,
    pub per_class: Vec<ClassScores>,
    pub predictions: Vec<usize>,
}

/// Per-class and macro scores over `labels` classes. A class never
/// predicted has precision 0; one with `P + R = 0` has F1 0.
pub fn classification_scores(gold: &[usize], pred: &[usize], labels: usize) -> Result<Evaluation, TrainError> {
    if gold.is_empty() {
        return Err(TrainError::Contract("cannot score an empty split".into()));
    }
    if gold.len() != pred.len() {
        return Err(TrainError::Contract(format!("{} gold labels, {} predictions", gold.len(), pred.len())));
    }
    if let Some(&l) = gold.iter().chain(pred).find(|&&l| l >= labels) {
        return Err(TrainError::Contract(format!("label {l} of {labels}")));
    }
    let per_class: Vec<ClassScores> = (0..labels)
        .map(|c| {
            let tp = gold.iter().zip(pred).filter(|&(&g, &p)| g == c && p == c).count() as f64;
            let predicted = pred.iter().filter(|&&p| p == c).count() as f64;
            let support = gold.iter().filter(|&&g| g == c).count();
            let precision = if predicted > 0.0 { tp / predicted } else { 0.0 };
            let recall = if support > 0 { tp / support as f64 } else { 0.0 };
            let f1 = if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            };
            ClassScores {
                precision,
                recall,
                f1,
                support,
            }
        })
        .collect();
    Ok(Evaluation {
        macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / labels as f64,
        per_class,
        predictions: pred.to_vec(),
    })
}

/// One line of the metrics stream. Epoch lines leave `test_f1` empty; the
/// final line of a run carries the selected epoch, the test score and the
/// run totals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub run_id: String,
    pub seed: u64,
    pub mode: String,
    pub p: usize,
    pub epoch: usize,
    pub loss_joint: f64,
    pub loss_ce: f64,
    pub elbo: f64,
    pub kld: f64,
    pub dev_f1: f64,
    pub test_f1: Option<f64>,
    pub wall_s: f64,
    pub attn_ops: u64,
    pub co2_g: f64,
}

/// Means over the instances of one epoch.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_joint: f64,
    pub loss_ce: f64,
    pub elbo: f64,
    pub kld: f64,
    pub dev_f1: f64,
    pub wall_s: f64,
    pub attn_ops: u64,
    pub topic_ops: u64,
}

/// Everything one seeded run reports.
#[derive(Clone, Debug, PartialEq)]
pub struct RunMetrics {
    pub run_id: String,
    pub seed: u64,
    pub mode: Mode,
    pub p: usize,
    pub epochs: Vec<EpochStats>,
    /// 1-based; 0 when no epoch ran.
    pub best_epoch: usize,
    pub dev_f1: f64,
    pub test: Option<Evaluation>,
    pub batches_per_epoch: usize,
}

impl RunMetrics {
    pub fn wall_s(&self) -> f64 {
        self.epochs.iter().map(|e| e.wall_s).sum()
    }

    pub fn attn_ops(&self) -> u64 {
        self.epochs.iter().map(|e| e.attn_ops).sum()
    }

    pub fn test_f1(&self) -> f64 {
        self.test.as_ref().map_or(0.0, |t| t.macro_f1)
    }

    /// Mean epoch time in hours.
    pub fn t_epoch_hours(&self) -> f64 {
        if self.epochs.is_empty() {
            0.0
        } else {
            self.wall_s() / 3600.0 / self.epochs.len() as f64
        }
    }

    /// Per-epoch lines followed by the final line.
    pub fn records(&self) -> Vec<MetricsRecord> {
        let line = |e: &EpochStats, test_f1: Option<f64>, wall_s: f64, attn_ops: u64| MetricsRecord {
            run_id: self.run_id.clone(),
            seed: self.seed,
            mode: self.mode.as_str().to_string(),
            p: self.p,
            epoch: e.epoch,
            loss_joint: e.loss_joint,
            loss_ce: e.loss_ce,
            elbo: e.elbo,
            kld: e.kld,
            dev_f1: e.dev_f1,
            test_f1,
            wall_s,
            attn_ops,
            co2_g: co2_grams(wall_s / 3600.0).unwrap_or(0.0),
        };
        let mut out: Vec<MetricsRecord> = self.epochs.iter().map(|e| line(e, None, e.wall_s, e.attn_ops)).collect();
        let best = self
            .best_epoch
            .checked_sub(1)
            .and_then(|i| self.epochs.get(i))
            .cloned()
            .unwrap_or_default();
        out.push(line(&best, Some(self.test_f1()), self.wall_s(), self.attn_ops()));
        out
    }
}

/// `f1 / reference` as a percentage.
pub fn retention(f1: f64, reference: f64) -> f64 {
    if reference == 0.0 {
        0.0
    } else {
        f1 / reference * 100.0
    }
}

/// Mean and population standard deviation; `single` marks a spread that
/// could not be estimated from fewer than two values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
    pub single: bool,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    if values.is_empty() {
        return MeanStd {
            mean: 0.0,
            std: 0.0,
            single: true,
        };
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return MeanStd {
            mean,
            std: 0.0,
            single: true,
        };
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    MeanStd {
        mean,
        std: var.sqrt(),
        single: false,
    }
}

/// Across-seed summary of one configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub run_id: String,
    pub mode: String,
    pub p: usize,
    pub seeds: Vec<u64>,
    pub test_f1: MeanStd,
    /// Percent of the reference F1, when a reference is given.
    pub rtn: Option<f64>,
    pub t_epoch_h: f64,
    pub t_h: f64,
    pub co2_g: f64,
    pub attn_ops: u64,
}

pub fn summarize(runs: &[RunMetrics], reference_f1: Option<f64>) -> Result<Summary, TrainError> {
    let first = runs
        .first()
        .ok_or_else(|| TrainError::Contract("no runs to summarize".into()))?;
    let f1s: Vec<f64> = runs.iter().map(RunMetrics::test_f1).collect();
    let test_f1 = mean_std(&f1s);
    let t_h = runs.iter().map(|r| r.wall_s()).sum::<f64>() / 3600.0 / runs.len() as f64;
    Ok(Summary {
        run_id: first.run_id.clone(),
        mode: first.mode.as_str().to_string(),
        p: first.p,
        seeds: runs.iter().map(|r| r.seed).collect(),
        test_f1,
        rtn: reference_f1.map(|r| retention(test_f1.mean, r)),
        t_epoch_h: runs.iter().map(RunMetrics::t_epoch_hours).sum::<f64>() / runs.len() as f64,
        t_h,
        co2_g: co2_grams(t_h).unwrap_or(0.0),
        attn_ops: first.attn_ops(),
    })
}
