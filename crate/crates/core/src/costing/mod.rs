//! Closed-form attention cost, CO₂ estimates from wall time, cost-vs-length
//! curves and Pareto frontiers over (F1, cost).

mod pareto;

use std::fmt::Write as _;

pub use pareto::{
    brute_force_frontier, frontier_flags, pareto_csv, pareto_frontier, ParetoPoint, PARETO_CSV_HEADER,
};

/// Average draw of the reference hardware in kilowatts.
pub const DEFAULT_POWER_KW: f64 = 0.07;
/// Grid carbon intensity in kg CO₂ per kWh.
pub const DEFAULT_GRID_KG_PER_KWH: f64 = 0.61;
pub const LBS_PER_KG: f64 = 2.20462;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CostError {
    #[error("invalid cost inputs: {0}")]
    Invalid(String),
}

type Result<T> = std::result::Result<T, CostError>;

/// Sizes that determine the work of one batch and one epoch.
///
/// `b` counts sequences of length `x` per batch; the reference model reads
/// the full length `n = x * p` instead.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ComplexityInputs {
    pub b: u64,
    pub n: u64,
    pub x: u64,
    pub p: u64,
    pub hidden: u64,
    pub layers: u64,
    /// Batches per epoch of the reference model.
    pub batches: u64,
    pub topics: u64,
    pub vocab: u64,
    /// Only used by the activation-memory proxy.
    pub heads: u64,
}

impl ComplexityInputs {
    /// Inputs for sequence length `n` split into `p` partitions.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        b: u64,
        n: u64,
        p: u64,
        hidden: u64,
        layers: u64,
        batches: u64,
        topics: u64,
        vocab: u64,
    ) -> Result<Self> {
        let c = Self {
            b,
            n,
            x: n.checked_div(p).unwrap_or(0),
            p,
            hidden,
            layers,
            batches,
            topics,
            vocab,
            heads: 1,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("b", self.b),
            ("N", self.n),
            ("x", self.x),
            ("p", self.p),
            ("H_B", self.hidden),
            ("n_l", self.layers),
            ("n_b", self.batches),
            ("K", self.topics),
            ("Z", self.vocab),
            ("heads", self.heads),
        ];
        if let Some((name, _)) = fields.iter().find(|(_, v)| *v == 0) {
            return Err(CostError::Invalid(format!("{name} must be positive")));
        }
        if self.x * self.p != self.n {
            return Err(CostError::Invalid(format!(
                "N={} is not x={} times p={}",
                self.n, self.x, self.p
            )));
        }
        Ok(())
    }

    fn wide(&self) -> [u128; 9] {
        [
            self.b, self.n, self.x, self.p, self.hidden, self.layers, self.batches, self.topics, self.vocab,
        ]
        .map(u128::from)
    }

    /// Topic-model term of one batch, `b K Z`.
    pub fn topic_ops_batch(&self) -> u128 {
        let [b, .., k, z] = self.wide();
        b * k * z
    }

    /// Attention term of one batch: `b N² H_B n_l`, or `b x² H_B n_l`
    /// (= `b N² H_B n_l / p²`) when partitioned.
    pub fn attention_ops_batch(&self, partitioned: bool) -> u128 {
        let [b, n, x, _, h, l, ..] = self.wide();
        let len = if partitioned { x } else { n };
        b * len * len * h * l
    }

    /// Attention term of one epoch. The partitioned model runs `p n_b`
    /// batches, so its total is `b N² H_B n_b n_l / p`.
    pub fn attention_ops_epoch(&self, partitioned: bool) -> u128 {
        let [_, _, _, p, _, _, nb, ..] = self.wide();
        let batches = if partitioned { p * nb } else { nb };
        self.attention_ops_batch(partitioned) * batches
    }
}

/// Operations of one batch: `b N² H_B n_l` for the reference model,
/// `b K Z + b (N² H_B / p²) n_l` when partitioned.
pub fn predict_ops_batch(c: &ComplexityInputs, partitioned: bool) -> Result<u128> {
    c.validate()?;
    let topic = if partitioned { c.topic_ops_batch() } else { 0 };
    Ok(topic + c.attention_ops_batch(partitioned))
}

/// Operations of one epoch: `b N² H_B n_b n_l` for the reference model,
/// `b K Z n_b + b (N² H_B n_b / p) n_l` when partitioned.
pub fn predict_ops_epoch(c: &ComplexityInputs, partitioned: bool) -> Result<u128> {
    c.validate()?;
    let topic = if partitioned {
        c.topic_ops_batch() * u128::from(c.batches)
    } else {
        0
    };
    Ok(topic + c.attention_ops_epoch(partitioned))
}

/// Grams of CO₂ for `hours` at `power_kw` on a grid emitting
/// `grid_kg_per_kwh`.
pub fn estimate_co2(hours: f64, power_kw: f64, grid_kg_per_kwh: f64) -> Result<f64> {
    if !hours.is_finite() || hours < 0.0 {
        return Err(CostError::Invalid(format!("hours must be a non-negative number, got {hours}")));
    }
    if !(power_kw >= 0.0 && grid_kg_per_kwh >= 0.0) {
        return Err(CostError::Invalid("power and grid intensity must be non-negative".into()));
    }
    Ok(power_kw * hours * grid_kg_per_kwh * 1000.0)
}

/// [`estimate_co2`] at the default power draw and grid intensity.
pub fn co2_grams(hours: f64) -> Result<f64> {
    estimate_co2(hours, DEFAULT_POWER_KW, DEFAULT_GRID_KG_PER_KWH)
}

/// Predicted and measured work of one configuration.
#[derive(Clone, Debug, PartialEq)]
pub struct CostReport {
    pub inputs: ComplexityInputs,
    pub reference_batch_ops: u128,
    pub partitioned_batch_ops: u128,
    pub reference_epoch_ops: u128,
    pub partitioned_epoch_ops: u128,
    pub measured_ops: u128,
    pub wall_hours: f64,
    pub co2_g: f64,
}

impl CostReport {
    pub fn new(inputs: ComplexityInputs, measured_ops: u128, wall_hours: f64) -> Result<Self> {
        Ok(Self {
            inputs,
            reference_batch_ops: predict_ops_batch(&inputs, false)?,
            partitioned_batch_ops: predict_ops_batch(&inputs, true)?,
            reference_epoch_ops: predict_ops_epoch(&inputs, false)?,
            partitioned_epoch_ops: predict_ops_epoch(&inputs, true)?,
            measured_ops,
            wall_hours,
            co2_g: co2_grams(wall_hours)?,
        })
    }
}

/// Seconds per operation observed in one measured run.
pub fn calibrate(measured_ops: u128, wall_seconds: f64) -> Result<f64> {
    if measured_ops == 0 || wall_seconds.is_nan() || wall_seconds <= 0.0 {
        return Err(CostError::Invalid("calibration needs work and elapsed time".into()));
    }
    Ok(wall_seconds / measured_ops as f64)
}

/// One row of a cost-vs-length curve.
#[derive(Clone, Debug, PartialEq)]
pub struct CurvePoint {
    pub length: u64,
    pub attention_ops: u128,
    pub total_ops: u128,
    pub attention_hours: f64,
    pub hours: f64,
    pub co2_g: f64,
    /// Estimated attention-score entries alive in one batch,
    /// `b x² heads n_l`; a stand-in for activation memory.
    pub memory_entries: u128,
}

/// Epoch cost of `base` at each sequence length, keeping `p` fixed (so
/// `x = length / p`) and converting operations to hours with
/// `seconds_per_op`.
pub fn cost_curve(lengths: &[u64], base: &ComplexityInputs, seconds_per_op: f64) -> Result<Vec<CurvePoint>> {
    if !seconds_per_op.is_finite() || seconds_per_op <= 0.0 {
        return Err(CostError::Invalid("seconds per op must be positive".into()));
    }
    let partitioned = base.p > 1;
    lengths
        .iter()
        .map(|&length| {
            let c = ComplexityInputs {
                n: length,
                x: length / base.p,
                ..*base
            };
            c.validate()?;
            let attention_ops = c.attention_ops_epoch(partitioned);
            let total_ops = predict_ops_epoch(&c, partitioned)?;
            let to_hours = |ops: u128| ops as f64 * seconds_per_op / 3600.0;
            let hours = to_hours(total_ops);
            let [b, _, x, ..] = c.wide();
            Ok(CurvePoint {
                length,
                attention_ops,
                total_ops,
                attention_hours: to_hours(attention_ops),
                hours,
                co2_g: co2_grams(hours)?,
                memory_entries: b * x * x * u128::from(c.heads) * u128::from(c.layers),
            })
        })
        .collect()
}

pub const CURVE_CSV_HEADER: &str = "length,attention_ops,total_ops,hours,co2_g,memory_entries_estimate";

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = format!("{CURVE_CSV_HEADER}\n");
    for p in points {
        let _ = writeln!(
            out,
            "{},{},{},{:.3},{:.2},{}",
            p.length, p.attention_ops, p.total_ops, p.hours, p.co2_g, p.memory_entries
        );
    }
    out
}

#[cfg(test)]
mod tests;
