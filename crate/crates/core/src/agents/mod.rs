//! Predictor and verifier agent contracts plus their backends.
//!
//! - [`SurrogateBackend`]: the local MLP, paired with the [`RuleVerifier`].
//! - [`ScriptedBackend`]: fixture replay keyed by `(candidate id, round)`.
//! - [`RemoteBackend`]: JSON-lines over TCP to an LLM gateway.

mod remote;
mod rule;
mod scripted;
mod surrogate_backend;
pub mod trace;
mod types;

pub use remote::{RemoteBackend, RemoteConfig, AGENT_PROTOCOL, DEFAULT_TOKEN_ENV, PROMPT_VERSION};
pub use rule::{RuleVerifier, CHECK_NAMES, CONF_TOLERANCE, UNPARSEABLE_TRACE};
pub use scripted::{FixtureEntry, FixtureKind, PredictScript, ScriptedBackend, ScriptedFixture};
pub use surrogate_backend::SurrogateBackend;
pub use types::{Candidate, CheckResult, Decision, PredictorOutput, VerifierVerdict};

use crate::chem::{featurize, FingerprintParams};
use crate::score::EfficiencyScore;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("no {kind} fixture entry for candidate {candidate:?} round {round}")]
    MissingFixture {
        candidate: String,
        round: u32,
        kind: FixtureKind,
    },
    #[error("fixture line {line}: {reason}")]
    BadFixture { line: usize, reason: String },
    #[error("remote call timed out after {0} ms")]
    Timeout(u64),
    #[error("remote call failed after {attempts} attempt(s): {last}")]
    RetriesExhausted { attempts: u32, last: String },
    #[error("malformed remote reply ({reason}); raw payload: {raw}")]
    MalformedReply { reason: String, raw: String },
    #[error("remote agent reported an error: {0}")]
    Remote(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("candidate fingerprint ({got_bits} bits, radius {got_radius}) does not match the checkpoint ({want_bits} bits, radius {want_radius})")]
    FingerprintMismatch {
        want_bits: u32,
        want_radius: u8,
        got_bits: u32,
        got_radius: u8,
    },
    #[error(transparent)]
    Surrogate(#[from] crate::surrogate::SurrogateError),
    #[error(transparent)]
    Chem(#[from] crate::chem::ChemError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Input to one predictor round.
#[derive(Debug, Clone, Copy)]
pub struct PredictRequest<'a> {
    pub candidate: &'a Candidate,
    /// 1-based round number.
    pub round: u32,
    /// Every corrective feedback text from earlier rounds, oldest first.
    pub feedback: &'a [String],
}

/// Input to one verifier call. The verifier judges only `(r_pred, y_eff)`;
/// the id and round are routing keys for scripted and remote backends.
#[derive(Debug, Clone, Copy)]
pub struct VerifyRequest<'a> {
    pub candidate_id: &'a str,
    pub round: u32,
    pub r_pred: &'a str,
    pub y_eff: EfficiencyScore,
}

pub trait Predictor: Send + Sync {
    fn predict(&self, req: PredictRequest<'_>) -> Result<PredictorOutput, AgentError>;
}

pub trait Verifier: Send + Sync {
    fn verify(&self, req: VerifyRequest<'_>) -> Result<VerifierVerdict, AgentError>;
}

/// Where an agent's answers come from. Each kind carries only its own fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BackendConfig {
    /// Local MLP for prediction; the rule verifier for verification, which
    /// needs no checkpoint.
    Surrogate {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        checkpoint: Option<PathBuf>,
    },
    Scripted {
        fixture: PathBuf,
    },
    Remote(RemoteConfig),
}

impl Default for BackendConfig {
    fn default() -> Self {
        BackendConfig::Surrogate { checkpoint: None }
    }
}

/// A predictor/verifier pair ready for the loop.
#[derive(Clone)]
pub struct Agents {
    pub predictor: Arc<dyn Predictor>,
    pub verifier: Arc<dyn Verifier>,
    /// Fingerprint settings candidates must be featurized with.
    pub fingerprint: FingerprintParams,
}

impl Agents {
    pub fn new(predictor: Arc<dyn Predictor>, verifier: Arc<dyn Verifier>, fingerprint: FingerprintParams) -> Self {
        Self {
            predictor,
            verifier,
            fingerprint,
        }
    }

    /// Builds both agents. Scripted configs that point to the same fixture
    /// share one backend (and its call counters).
    pub fn from_config(predictor: &BackendConfig, verifier: &BackendConfig) -> Result<Self, AgentError> {
        let mut fingerprint = FingerprintParams::default();
        let mut scripted: Option<(PathBuf, Arc<ScriptedBackend>)> = None;
        let mut load_scripted = |path: &PathBuf| -> Result<Arc<ScriptedBackend>, AgentError> {
            if let Some((p, b)) = &scripted {
                if p == path {
                    return Ok(b.clone());
                }
            }
            let b = Arc::new(ScriptedBackend::new(ScriptedFixture::load(path)?));
            scripted = Some((path.clone(), b.clone()));
            Ok(b)
        };

        let p: Arc<dyn Predictor> = match predictor {
            BackendConfig::Surrogate { checkpoint: Some(path) } => {
                let b = SurrogateBackend::load(path)?;
                fingerprint = b.fingerprint_params();
                Arc::new(b)
            }
            BackendConfig::Surrogate { checkpoint: None } => {
                return Err(AgentError::Config("surrogate predictor needs a checkpoint path".into()))
            }
            BackendConfig::Scripted { fixture } => load_scripted(fixture)?,
            BackendConfig::Remote(cfg) => Arc::new(RemoteBackend::new(cfg.clone())?),
        };
        let v: Arc<dyn Verifier> = match verifier {
            BackendConfig::Surrogate { .. } => Arc::new(RuleVerifier),
            BackendConfig::Scripted { fixture } => load_scripted(fixture)?,
            BackendConfig::Remote(cfg) => Arc::new(RemoteBackend::new(cfg.clone())?),
        };
        Ok(Self::new(p, v, fingerprint))
    }

    pub fn candidate(&self, id: &str, smiles: &str) -> Result<Candidate, AgentError> {
        Ok(Candidate {
            id: id.to_string(),
            smiles: smiles.to_string(),
            fingerprint: featurize(smiles, &self.fingerprint)?,
        })
    }
}
