//! Fingerprint MLP surrogate for the predictor agent.
//!
//! `nbits → h1 → h2 → 11` ReLU network trained on the conditional
//! objective with plain minibatch gradient descent.

mod checkpoint;
mod mlp;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use mlp::{Dense, MlpParams, OUTPUTS};
pub use train::{evaluate, train, EpochStats, TrainConfig, TrainOutcome};

use crate::agents::trace::ReasoningTrace;
use crate::agents::{Decision, PredictorOutput};
use crate::chem::Fingerprint;
use crate::numerics::{self, Logits};
use crate::score::EfficiencyScore;
use std::f64::consts::LN_2;
use thiserror::Error;

/// Probability above which the toxicity gate fires (strictly greater).
pub const TOXICITY_THRESHOLD: f64 = 0.5;

pub const TOP_FEATURES: usize = 5;

#[derive(Debug, Error)]
pub enum SurrogateError {
    #[error("input has {got} bits but the network expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainSet,
    #[error("validation set is empty")]
    EmptyValidationSet,
    #[error(transparent)]
    Dataset(#[from] crate::dataset::DatasetError),
    #[error(transparent)]
    Chem(#[from] crate::chem::ChemError),
    #[error(transparent)]
    Numerics(#[from] numerics::NumericsError),
    #[error(transparent)]
    Eval(#[from] crate::evalkit::EvalError),
    #[error("checkpoint io: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("checkpoint format version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

fn active_bits(params: &MlpParams, x: &Fingerprint) -> Result<Vec<usize>, SurrogateError> {
    let expected = params.input_dim();
    if x.nbits() as usize != expected {
        return Err(SurrogateError::DimensionMismatch {
            expected,
            got: x.nbits() as usize,
        });
    }
    Ok(x.ones().collect())
}

/// Logits for one fingerprint.
pub fn forward(params: &MlpParams, x: &Fingerprint) -> Result<Logits, SurrogateError> {
    let active = active_bits(params, x)?;
    let (tox, eff) = params.logits(&active);
    Ok(Logits::single(tox, eff))
}

/// Single-round prediction with the toxicity gate applied.
pub fn predict(params: &MlpParams, x: &Fingerprint) -> Result<PredictorOutput, SurrogateError> {
    let active = active_bits(params, x)?;
    let (z_tox, z_eff) = params.logits(&active);
    let p_tox = numerics::sigmoid(z_tox);
    let margin = p_tox - TOXICITY_THRESHOLD;
    let top_features = top_features(params, &active);

    if p_tox > TOXICITY_THRESHOLD {
        let conf = binary_confidence(p_tox);
        let trace = ReasoningTrace {
            toxic: true,
            score: None,
            confidence: conf,
            distribution: None,
            top_features,
            toxicity_margin: margin,
            notes: Vec::new(),
        };
        return Ok(PredictorOutput {
            round: 1,
            decision: Decision::Unsafe,
            conf,
            r_pred: trace.render(),
        });
    }

    let p_eff = numerics::softmax(&z_eff);
    let efficiency = EfficiencyScore::from_class(p_eff.argmax()).expect("argmax below NUM_CLASSES");
    let conf = p_eff.confidence();
    let trace = ReasoningTrace {
        toxic: false,
        score: Some(efficiency.get()),
        confidence: conf,
        distribution: Some(*p_eff.as_array()),
        top_features,
        toxicity_margin: margin,
        notes: Vec::new(),
    };
    Ok(PredictorOutput {
        round: 1,
        decision: Decision::Safe {
            efficiency,
            p_eff: Some(p_eff),
        },
        conf,
        r_pred: trace.render(),
    })
}

/// Certainty of a binary call: `1 - H(p)/ln 2`.
fn binary_confidence(p: f64) -> f64 {
    let h: f64 = [p, 1.0 - p]
        .iter()
        .filter(|&&v| v > 0.0)
        .map(|&v| -v * v.ln())
        .sum();
    (1.0 - h / LN_2).clamp(0.0, 1.0)
}

/// Active bits ranked by the absolute sum of their first-layer weights;
/// ties go to the lower bit index.
fn top_features(params: &MlpParams, active: &[usize]) -> Vec<(usize, f64)> {
    let first = &params.layers[0];
    let mut contrib: Vec<(usize, f64)> = active
        .iter()
        .map(|&i| (i, first.w[i * first.outputs..(i + 1) * first.outputs].iter().sum()))
        .collect();
    contrib.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    contrib.truncate(TOP_FEATURES);
    contrib
}
