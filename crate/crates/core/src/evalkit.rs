//! Screening metrics: efficiency, extreme, middle and toxic accuracy plus
//! the efficiency MAE.
//!
//! Efficiency metrics only look at truly non-toxic pairs. A non-toxic pair
//! whose prediction carries no score (the model called it toxic) counts as
//! a miss for `efficiency_accuracy` but is left out of the extreme/middle
//! accuracies and the MAE; `unscored` reports how many such pairs there
//! were. Metrics over an empty subset are `None`, never 0 or 1.

use crate::score::EfficiencyScore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EvalError {
    #[error("no evaluation pairs")]
    Empty,
    #[error("pair {0:?} is truly non-toxic but has no true efficiency")]
    MissingTruth(String),
    #[error("pair {0:?} is predicted toxic but carries a predicted efficiency")]
    UnsafePrediction(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalPair {
    pub id: String,
    pub true_tox: bool,
    pub pred_tox: bool,
    #[serde(default)]
    pub true_eff: Option<EfficiencyScore>,
    #[serde(default)]
    pub pred_eff: Option<EfficiencyScore>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub value: Option<f64>,
    /// Size of the subset the metric was computed over.
    pub n: usize,
}

impl Metric {
    fn ratio(hits: usize, n: usize) -> Self {
        Self {
            value: (n > 0).then(|| hits as f64 / n as f64),
            n,
        }
    }

    fn mean(sum: f64, n: usize) -> Self {
        Self {
            value: (n > 0).then(|| sum / n as f64),
            n,
        }
    }

    pub fn or_zero(&self) -> f64 {
        self.value.unwrap_or(0.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub efficiency_accuracy: Metric,
    pub extreme_accuracy: Metric,
    pub middle_accuracy: Metric,
    pub toxic_accuracy: Metric,
    pub mae: Metric,
    /// Truly non-toxic pairs that received no efficiency prediction.
    pub unscored: usize,
}

pub const SUMMARY_HEADER: &str =
    "efficiency_acc,extreme_acc,middle_acc,toxic_acc,mae,n_efficiency,n_extreme,n_middle,n_toxic,n_mae,unscored";

impl MetricsReport {
    /// One comma-separated row matching [`SUMMARY_HEADER`]; undefined
    /// metrics print as `NA`.
    pub fn summary_row(&self) -> String {
        let f = |m: &Metric| m.value.map_or_else(|| "NA".to_string(), |v| format!("{v:.6}"));
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            f(&self.efficiency_accuracy),
            f(&self.extreme_accuracy),
            f(&self.middle_accuracy),
            f(&self.toxic_accuracy),
            f(&self.mae),
            self.efficiency_accuracy.n,
            self.extreme_accuracy.n,
            self.middle_accuracy.n,
            self.toxic_accuracy.n,
            self.mae.n,
            self.unscored
        )
    }
}

pub fn compute_metrics(pairs: &[EvalPair]) -> Result<MetricsReport, EvalError> {
    if pairs.is_empty() {
        return Err(EvalError::Empty);
    }
    let mut tox_hits = 0;
    let (mut eff_n, mut eff_hits) = (0, 0);
    let (mut ext_n, mut ext_hits) = (0, 0);
    let (mut mid_n, mut mid_hits) = (0, 0);
    let (mut abs_sum, mut scored) = (0.0, 0);

    for p in pairs {
        if p.pred_tox && p.pred_eff.is_some() {
            return Err(EvalError::UnsafePrediction(p.id.clone()));
        }
        if p.pred_tox == p.true_tox {
            tox_hits += 1;
        }
        if p.true_tox {
            continue;
        }
        let truth = p.true_eff.ok_or_else(|| EvalError::MissingTruth(p.id.clone()))?;
        eff_n += 1;
        let Some(pred) = p.pred_eff else { continue };
        let hit = pred == truth;
        eff_hits += hit as usize;
        if truth.is_extreme() {
            ext_n += 1;
            ext_hits += hit as usize;
        } else {
            mid_n += 1;
            mid_hits += hit as usize;
        }
        abs_sum += (pred.get() as f64 - truth.get() as f64).abs();
        scored += 1;
    }

    Ok(MetricsReport {
        efficiency_accuracy: Metric::ratio(eff_hits, eff_n),
        extreme_accuracy: Metric::ratio(ext_hits, ext_n),
        middle_accuracy: Metric::ratio(mid_hits, mid_n),
        toxic_accuracy: Metric::ratio(tox_hits, pairs.len()),
        mae: Metric::mean(abs_sum, scored),
        unscored: eff_n - scored,
    })
}
