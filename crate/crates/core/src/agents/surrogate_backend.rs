use super::{AgentError, PredictRequest, Predictor, PredictorOutput};
use crate::chem::FingerprintParams;
use crate::surrogate::{self, Checkpoint, MlpParams};
use std::path::Path;

/// The trained MLP as a predictor agent. Its numeric output does not depend
/// on feedback; each round after the first only acknowledges the
/// corrections received in the trace.
#[derive(Debug, Clone)]
pub struct SurrogateBackend {
    params: MlpParams,
    fingerprint: FingerprintParams,
}

impl SurrogateBackend {
    pub fn new(params: MlpParams, fingerprint: FingerprintParams) -> Result<Self, AgentError> {
        params
            .validate()
            .map_err(|e| AgentError::Config(format!("surrogate params: {e}")))?;
        if params.input_dim() != fingerprint.nbits as usize {
            return Err(AgentError::Config(format!(
                "network takes {} inputs but fingerprints have {} bits",
                params.input_dim(),
                fingerprint.nbits
            )));
        }
        Ok(Self { params, fingerprint })
    }

    pub fn from_checkpoint(c: &Checkpoint) -> Result<Self, AgentError> {
        Self::new(c.params.clone(), c.fingerprint)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }

    pub fn fingerprint_params(&self) -> FingerprintParams {
        self.fingerprint
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }
}

impl Predictor for SurrogateBackend {
    fn predict(&self, req: PredictRequest<'_>) -> Result<PredictorOutput, AgentError> {
        let fp = &req.candidate.fingerprint;
        if fp.nbits() != self.fingerprint.nbits || fp.radius() != self.fingerprint.radius {
            return Err(AgentError::FingerprintMismatch {
                want_bits: self.fingerprint.nbits,
                want_radius: self.fingerprint.radius,
                got_bits: fp.nbits(),
                got_radius: fp.radius(),
            });
        }
        let mut out = surrogate::predict(&self.params, fp)?;
        out.round = req.round;
        if !req.feedback.is_empty() {
            out.r_pred.push_str(&format!(
                "note: round {}: acknowledged {} correction(s)\n",
                req.round,
                req.feedback.len()
            ));
        }
        Ok(out)
    }
}
