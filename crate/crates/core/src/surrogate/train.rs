use super::checkpoint::Checkpoint;
use super::mlp::{split_outputs, Grads, MlpParams};
use super::{predict, SurrogateError};
use crate::chem::{featurize, FingerprintParams};
use crate::dataset::{ensure_finalized, records_digest, LipidRecord};
use crate::evalkit::{compute_metrics, EvalPair, MetricsReport};
use crate::numerics::{self, LossBreakdown, Logits, NUM_CLASSES};
use crate::score::EfficiencyScore;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub alpha: f64,
    pub eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub hidden: Vec<usize>,
    pub eval_every: usize,
    pub fingerprint: FingerprintParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            alpha: 0.1,
            eps: numerics::DEFAULT_EPS,
            epochs: 100,
            batch_size: 32,
            seed: 7,
            hidden: vec![256, 64],
            eval_every: 1,
            fingerprint: FingerprintParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), SurrogateError> {
        let bad = |m: String| Err(SurrogateError::InvalidConfig(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if !(self.eps > 0.0 && self.eps.is_finite()) {
            return bad(format!("eps must be positive, got {}", self.eps));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return bad(format!("alpha must be >= 0, got {}", self.alpha));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be >= 1".into());
        }
        if self.hidden.contains(&0) {
            return bad("hidden layer widths must be positive".into());
        }
        self.fingerprint.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Objective over the full training set after the epoch's updates.
    pub train_loss: LossBreakdown,
    pub val_efficiency_accuracy: Option<f64>,
    pub val_toxic_accuracy: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best: Checkpoint,
    pub history: Vec<EpochStats>,
    /// Parameters after the last epoch (not necessarily the best).
    pub last: MlpParams,
    pub warnings: Vec<String>,
}

struct Sample {
    active: Vec<usize>,
    toxic: bool,
    eff: Option<EfficiencyScore>,
}

fn featurize_all(records: &[LipidRecord], fp: &FingerprintParams) -> Result<Vec<Sample>, SurrogateError> {
    records
        .iter()
        .map(|r| {
            let x = featurize(&r.smiles, fp)?;
            Ok(Sample {
                active: x.ones().collect(),
                toxic: r.toxic,
                eff: r.efficiency_score,
            })
        })
        .collect()
}

/// Model predictions against record labels, through the toxicity gate.
pub fn evaluate(params: &MlpParams, records: &[LipidRecord], fp: &FingerprintParams) -> Result<MetricsReport, SurrogateError> {
    let pairs = records
        .iter()
        .map(|r| {
            let out = predict(params, &featurize(&r.smiles, fp)?)?;
            Ok(EvalPair {
                id: r.id.clone(),
                true_tox: r.toxic,
                pred_tox: out.y_tox(),
                true_eff: r.efficiency_score,
                pred_eff: out.y_eff(),
            })
        })
        .collect::<Result<Vec<_>, SurrogateError>>()?;
    Ok(compute_metrics(&pairs)?)
}

fn full_loss(params: &MlpParams, samples: &[Sample], cfg: &TrainConfig) -> Result<LossBreakdown, SurrogateError> {
    let mut tox = Vec::with_capacity(samples.len());
    let mut eff: Vec<[f64; NUM_CLASSES]> = Vec::with_capacity(samples.len());
    for s in samples {
        let (t, e) = params.logits(&s.active);
        tox.push(t);
        eff.push(e);
    }
    let logits = Logits::new(tox, eff)?;
    let labels_tox: Vec<bool> = samples.iter().map(|s| s.toxic).collect();
    let labels_eff: Vec<_> = samples.iter().map(|s| s.eff).collect();
    Ok(numerics::total_loss(&logits, &labels_tox, &labels_eff, cfg.alpha, cfg.eps)?)
}

/// Deterministic minibatch gradient descent on the conditional objective.
///
/// Returns the checkpoint with the best validation efficiency accuracy
/// (ties: higher validation toxic accuracy, then earlier epoch). Validation
/// runs every `eval_every` epochs and always after the final epoch.
pub fn train(train: &[LipidRecord], val: &[LipidRecord], cfg: &TrainConfig) -> Result<TrainOutcome, SurrogateError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(SurrogateError::EmptyTrainSet);
    }
    if val.is_empty() {
        return Err(SurrogateError::EmptyValidationSet);
    }
    ensure_finalized(train)?;
    ensure_finalized(val)?;

    let mut warnings = Vec::new();
    if train.iter().all(|r| r.toxic) {
        let msg = "training set is all toxic; the efficiency head will not be trained".to_string();
        log::warn!("{msg}");
        warnings.push(msg);
    }

    let samples = featurize_all(train, &cfg.fingerprint)?;
    let data_digest = records_digest(train);
    let mut params = MlpParams::init(cfg.fingerprint.nbits as usize, &cfg.hidden, cfg.seed);
    let mut grads = Grads::like(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1));
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<Checkpoint> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let traces: Vec<Vec<Vec<f64>>> = batch.iter().map(|&i| params.forward_trace(&samples[i].active)).collect();
            let (tox, eff): (Vec<f64>, Vec<[f64; NUM_CLASSES]>) = traces
                .iter()
                .map(|t| split_outputs(t.last().expect("output layer")))
                .unzip();
            let logits = Logits::new(tox, eff)?;
            let labels_tox: Vec<bool> = batch.iter().map(|&i| samples[i].toxic).collect();
            let labels_eff: Vec<_> = batch.iter().map(|&i| samples[i].eff).collect();
            let g = numerics::loss_gradients(&logits, &labels_tox, &labels_eff, cfg.alpha, cfg.eps)?;

            grads.clear();
            let mut dlogits = [0.0; super::OUTPUTS];
            for (j, &i) in batch.iter().enumerate() {
                dlogits[0] = g.tox[j];
                dlogits[1..].copy_from_slice(&g.eff[j]);
                grads.accumulate(&params, &samples[i].active, &traces[j], &dlogits);
            }
            grads.apply(&mut params, cfg.lr);
        }

        let train_loss = full_loss(&params, &samples, cfg)?;
        let mut stats = EpochStats {
            epoch,
            train_loss,
            val_efficiency_accuracy: None,
            val_toxic_accuracy: None,
        };
        if epoch % cfg.eval_every == 0 || epoch == cfg.epochs {
            let m = evaluate(&params, val, &cfg.fingerprint)?;
            stats.val_efficiency_accuracy = m.efficiency_accuracy.value;
            stats.val_toxic_accuracy = m.toxic_accuracy.value;
            let cand = (m.efficiency_accuracy.or_zero(), m.toxic_accuracy.or_zero());
            let better = match &best {
                None => true,
                Some(b) => cand.0 > b.val_efficiency_accuracy
                    || (cand.0 == b.val_efficiency_accuracy && cand.1 > b.val_toxic_accuracy),
            };
            if better {
                best = Some(Checkpoint::new(params.clone(), epoch, cand.0, cand.1, cfg, &data_digest));
            }
        }
        history.push(stats);
    }

    let best = match best {
        Some(b) => b,
        // epochs == 0: the untrained network is the only candidate
        None => {
            let m = evaluate(&params, val, &cfg.fingerprint)?;
            Checkpoint::new(
                params.clone(),
                0,
                m.efficiency_accuracy.or_zero(),
                m.toxic_accuracy.or_zero(),
                cfg,
                &data_digest,
            )
        }
    };
    Ok(TrainOutcome {
        best,
        history,
        last: params,
        warnings,
    })
}
