use std::cmp::Ordering;
use std::fmt::Write as _;

use super::{co2_grams, CostError};

/// A run summarized by its score (higher is better) and its cost (lower is
/// better).
#[derive(Clone, Debug, PartialEq)]
pub struct ParetoPoint {
    pub label: String,
    pub f1: f64,
    pub cost: f64,
}

impl ParetoPoint {
    pub fn new(label: impl Into<String>, f1: f64, cost: f64) -> Self {
        Self {
            label: label.into(),
            f1,
            cost,
        }
    }

    /// At least as good on both axes and strictly better on one.
    pub fn dominates(&self, other: &ParetoPoint) -> bool {
        self.f1 >= other.f1 && self.cost <= other.cost && (self.f1 > other.f1 || self.cost < other.cost)
    }
}

fn check(points: &[ParetoPoint]) -> Result<(), CostError> {
    if points.is_empty() {
        return Err(CostError::Invalid("no points".into()));
    }
    if let Some(p) = points.iter().find(|p| !p.f1.is_finite() || !p.cost.is_finite()) {
        return Err(CostError::Invalid(format!("point {} is not finite", p.label)));
    }
    Ok(())
}

fn by_cost(a: &ParetoPoint, b: &ParetoPoint) -> Ordering {
    a.cost.total_cmp(&b.cost).then(b.f1.total_cmp(&a.f1))
}

/// `true` for every point no other point dominates, in input order.
pub fn frontier_flags(points: &[ParetoPoint]) -> Result<Vec<bool>, CostError> {
    check(points)?;
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&i, &j| by_cost(&points[i], &points[j]));

    let mut flags = vec![false; points.len()];
    // Best score among strictly cheaper points.
    let mut best_cheaper = f64::NEG_INFINITY;
    let mut start = 0;
    while start < order.len() {
        let cost = points[order[start]].cost;
        let end = start + order[start..].iter().take_while(|&&i| points[i].cost == cost).count();
        // Sorted by descending score within a cost, so the first is the best.
        let top = points[order[start]].f1;
        if top > best_cheaper {
            for &i in &order[start..end] {
                flags[i] = points[i].f1 == top;
            }
        }
        best_cheaper = best_cheaper.max(top);
        start = end;
    }
    Ok(flags)
}

/// Non-dominated points sorted by ascending cost (higher score first on
/// ties). Duplicates are kept.
pub fn pareto_frontier(points: &[ParetoPoint]) -> Result<Vec<ParetoPoint>, CostError> {
    let flags = frontier_flags(points)?;
    let mut out: Vec<ParetoPoint> = points
        .iter()
        .zip(flags)
        .filter(|(_, on)| *on)
        .map(|(p, _)| p.clone())
        .collect();
    out.sort_by(by_cost);
    Ok(out)
}

/// Quadratic pairwise check, used as an oracle for [`pareto_frontier`].
pub fn brute_force_frontier(points: &[ParetoPoint]) -> Result<Vec<ParetoPoint>, CostError> {
    check(points)?;
    let mut out: Vec<ParetoPoint> = points
        .iter()
        .filter(|p| !points.iter().any(|q| q.dominates(p)))
        .cloned()
        .collect();
    out.sort_by(by_cost);
    Ok(out)
}

pub const PARETO_CSV_HEADER: &str = "label,f1,cost_hours,co2_g,on_frontier";

/// One row per point in input order, cost read as hours.
pub fn pareto_csv(points: &[ParetoPoint]) -> Result<String, CostError> {
    let flags = frontier_flags(points)?;
    let mut out = format!("{PARETO_CSV_HEADER}\n");
    for (p, on) in points.iter().zip(flags) {
        let _ = writeln!(
            out,
            "{},{:.3},{:.3},{:.2},{}",
            p.label,
            p.f1,
            p.cost,
            co2_grams(p.cost)?,
            u8::from(on)
        );
    }
    Ok(out)
}
