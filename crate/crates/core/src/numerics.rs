//! Conditional multi-task objective and entropy confidence.
//!
//! Toxicity is a binary cross-entropy averaged over the whole batch.
//! Efficiency is a 10-class cross-entropy that only non-toxic samples
//! contribute to, normalized by the masked count plus `eps`. The total is
//! `l_tox + alpha * l_eff`. Everything here is `f64` and uses natural logs;
//! the confidence normalizer is therefore `ln 10`.

use crate::score::EfficiencyScore;
use serde::{Deserialize, Serialize};
use std::f64::consts::LN_10;
use thiserror::Error;

pub const NUM_CLASSES: usize = 10;

/// Slack allowed when checking that a probability vector sums to one.
pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

pub const DEFAULT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NumericsError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("batch length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite logit at sample {0}")]
    NonFinite(usize),
    #[error("non-toxic sample {0} has no efficiency label")]
    MissingEfficiencyLabel(usize),
    #[error("probability vector off the simplex: {0}")]
    OffSimplex(String),
    #[error("invalid hyperparameter: {0}")]
    BadHyperparameter(String),
}

/// Raw model outputs for a batch: one toxicity logit and ten efficiency
/// logits per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Logits {
    pub tox: Vec<f64>,
    pub eff: Vec<[f64; NUM_CLASSES]>,
}

impl Logits {
    pub fn new(tox: Vec<f64>, eff: Vec<[f64; NUM_CLASSES]>) -> Result<Self, NumericsError> {
        let l = Self { tox, eff };
        l.validate()?;
        Ok(l)
    }

    pub fn single(tox: f64, eff: [f64; NUM_CLASSES]) -> Self {
        Self {
            tox: vec![tox],
            eff: vec![eff],
        }
    }

    pub fn len(&self) -> usize {
        self.tox.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tox.is_empty()
    }

    fn validate(&self) -> Result<(), NumericsError> {
        if self.tox.len() != self.eff.len() {
            return Err(NumericsError::LengthMismatch(format!(
                "{} toxicity logits vs {} efficiency rows",
                self.tox.len(),
                self.eff.len()
            )));
        }
        for (i, (t, e)) in self.tox.iter().zip(&self.eff).enumerate() {
            if !t.is_finite() || !e.iter().all(|v| v.is_finite()) {
                return Err(NumericsError::NonFinite(i));
            }
        }
        Ok(())
    }
}

/// Gradients with the same layout as [`Logits`].
#[derive(Debug, Clone, PartialEq)]
pub struct LogitGrads {
    pub tox: Vec<f64>,
    pub eff: Vec<[f64; NUM_CLASSES]>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_tox: f64,
    pub l_eff: f64,
    pub l_total: f64,
    pub mask_count: usize,
}

/// A distribution over the ten efficiency classes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct ProbVector([f64; NUM_CLASSES]);

impl ProbVector {
    pub fn new(p: [f64; NUM_CLASSES]) -> Result<Self, NumericsError> {
        if let Some(v) = p.iter().find(|v| !v.is_finite() || **v < 0.0) {
            return Err(NumericsError::OffSimplex(format!("entry {v}")));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOLERANCE {
            return Err(NumericsError::OffSimplex(format!("sum {sum}")));
        }
        Ok(Self(p))
    }

    pub fn uniform() -> Self {
        Self([1.0 / NUM_CLASSES as f64; NUM_CLASSES])
    }

    pub fn one_hot(class: usize) -> Self {
        let mut p = [0.0; NUM_CLASSES];
        p[class] = 1.0;
        Self(p)
    }

    pub fn as_array(&self) -> &[f64; NUM_CLASSES] {
        &self.0
    }

    /// Most probable class; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.0.iter().enumerate().skip(1) {
            if v > self.0[best] {
                best = i;
            }
        }
        best
    }

    pub fn entropy(&self) -> f64 {
        entropy_raw(&self.0)
    }

    pub fn confidence(&self) -> f64 {
        confidence_from_entropy(self.entropy())
    }
}

impl TryFrom<Vec<f64>> for ProbVector {
    type Error = NumericsError;

    fn try_from(v: Vec<f64>) -> Result<Self, Self::Error> {
        let arr: [f64; NUM_CLASSES] = v
            .try_into()
            .map_err(|v: Vec<f64>| NumericsError::OffSimplex(format!("{} entries, need 10", v.len())))?;
        Self::new(arr)
    }
}

impl From<ProbVector> for Vec<f64> {
    fn from(p: ProbVector) -> Self {
        p.0.to_vec()
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn log_sum_exp(z: &[f64; NUM_CLASSES]) -> f64 {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

pub fn softmax(z: &[f64; NUM_CLASSES]) -> ProbVector {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; NUM_CLASSES];
    let mut s = 0.0;
    for (pi, zi) in p.iter_mut().zip(z) {
        *pi = (zi - m).exp();
        s += *pi;
    }
    p.iter_mut().for_each(|v| *v /= s);
    ProbVector(p)
}

/// `-[y ln σ(z) + (1-y) ln(1-σ(z))]` as `max(z,0) - z·y + ln(1 + e^{-|z|})`.
fn bce_with_logit(z: f64, y: bool) -> f64 {
    let y = if y { 1.0 } else { 0.0 };
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

fn check_batch(logits: &Logits, labels_tox: &[bool]) -> Result<(), NumericsError> {
    if logits.is_empty() {
        return Err(NumericsError::EmptyBatch);
    }
    logits.validate()?;
    if labels_tox.len() != logits.len() {
        return Err(NumericsError::LengthMismatch(format!(
            "{} toxicity labels for {} samples",
            labels_tox.len(),
            logits.len()
        )));
    }
    Ok(())
}

fn check_eff_labels(
    labels_eff: &[Option<EfficiencyScore>],
    labels_tox: &[bool],
) -> Result<(), NumericsError> {
    if labels_eff.len() != labels_tox.len() {
        return Err(NumericsError::LengthMismatch(format!(
            "{} efficiency labels for {} samples",
            labels_eff.len(),
            labels_tox.len()
        )));
    }
    match labels_tox
        .iter()
        .zip(labels_eff)
        .position(|(&t, e)| !t && e.is_none())
    {
        Some(i) => Err(NumericsError::MissingEfficiencyLabel(i)),
        None => Ok(()),
    }
}

fn check_eps(eps: f64) -> Result<(), NumericsError> {
    if eps > 0.0 && eps.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::BadHyperparameter(format!("eps must be positive, got {eps}")))
    }
}

pub fn toxicity_loss(logits: &Logits, labels_tox: &[bool]) -> Result<f64, NumericsError> {
    check_batch(logits, labels_tox)?;
    let sum: f64 = logits
        .tox
        .iter()
        .zip(labels_tox)
        .map(|(&z, &y)| bce_with_logit(z, y))
        .sum();
    Ok(sum / logits.len() as f64)
}

/// Masked efficiency cross-entropy. Toxic samples are skipped outright, so
/// their efficiency logits are never read.
pub fn efficiency_loss(
    logits: &Logits,
    labels_eff: &[Option<EfficiencyScore>],
    labels_tox: &[bool],
    eps: f64,
) -> Result<f64, NumericsError> {
    check_batch(logits, labels_tox)?;
    check_eff_labels(labels_eff, labels_tox)?;
    check_eps(eps)?;
    let (sum, count) = masked_ce(logits, labels_eff, labels_tox);
    Ok(sum / (count as f64 + eps))
}

fn masked_ce(
    logits: &Logits,
    labels_eff: &[Option<EfficiencyScore>],
    labels_tox: &[bool],
) -> (f64, usize) {
    let mut sum = 0.0;
    let mut count = 0;
    for i in 0..logits.len() {
        if labels_tox[i] {
            continue;
        }
        if let Some(y) = labels_eff[i] {
            let z = &logits.eff[i];
            sum += log_sum_exp(z) - z[y.class_index()];
            count += 1;
        }
    }
    (sum, count)
}

pub fn total_loss(
    logits: &Logits,
    labels_tox: &[bool],
    labels_eff: &[Option<EfficiencyScore>],
    alpha: f64,
    eps: f64,
) -> Result<LossBreakdown, NumericsError> {
    check_alpha(alpha)?;
    let l_tox = toxicity_loss(logits, labels_tox)?;
    let l_eff = efficiency_loss(logits, labels_eff, labels_tox, eps)?;
    Ok(LossBreakdown {
        l_tox,
        l_eff,
        l_total: l_tox + alpha * l_eff,
        mask_count: labels_tox.iter().filter(|t| !**t).count(),
    })
}

fn check_alpha(alpha: f64) -> Result<(), NumericsError> {
    if alpha >= 0.0 && alpha.is_finite() {
        Ok(())
    } else {
        Err(NumericsError::BadHyperparameter(format!("alpha must be >= 0, got {alpha}")))
    }
}

/// Analytic gradient of `l_total` with respect to every logit.
pub fn loss_gradients(
    logits: &Logits,
    labels_tox: &[bool],
    labels_eff: &[Option<EfficiencyScore>],
    alpha: f64,
    eps: f64,
) -> Result<LogitGrads, NumericsError> {
    check_batch(logits, labels_tox)?;
    check_eff_labels(labels_eff, labels_tox)?;
    check_eps(eps)?;
    check_alpha(alpha)?;
    let n = logits.len() as f64;
    let tox = logits
        .tox
        .iter()
        .zip(labels_tox)
        .map(|(&z, &y)| (sigmoid(z) - if y { 1.0 } else { 0.0 }) / n)
        .collect();

    let masked = labels_tox.iter().filter(|t| !**t).count() as f64;
    let scale = alpha / (masked + eps);
    let eff = (0..logits.len())
        .map(|i| {
            let mut g = [0.0; NUM_CLASSES];
            if labels_tox[i] {
                return g;
            }
            let Some(y) = labels_eff[i] else { return g };
            let p = softmax(&logits.eff[i]);
            for (k, gk) in g.iter_mut().enumerate() {
                let target = if k == y.class_index() { 1.0 } else { 0.0 };
                *gk = scale * (p.0[k] - target);
            }
            g
        })
        .collect();
    Ok(LogitGrads { tox, eff })
}

fn entropy_raw(p: &[f64; NUM_CLASSES]) -> f64 {
    -p.iter().filter(|&&v| v > 0.0).map(|&v| v * v.ln()).sum::<f64>()
}

fn confidence_from_entropy(h: f64) -> f64 {
    (1.0 - h / LN_10).clamp(0.0, 1.0)
}

/// Shannon entropy in nats, validating the simplex first.
pub fn entropy(p: &[f64; NUM_CLASSES]) -> Result<f64, NumericsError> {
    Ok(ProbVector::new(*p)?.entropy())
}

/// `1 - H(p)/ln 10`, clamped to [0, 1].
pub fn confidence(p: &[f64; NUM_CLASSES]) -> Result<f64, NumericsError> {
    Ok(ProbVector::new(*p)?.confidence())
}
