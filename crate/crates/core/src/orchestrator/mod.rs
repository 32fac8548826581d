//! Per-candidate verification loop and batch screening.
//!
//! Each round the predictor is called with every earlier correction. A toxic
//! call ends the loop at once. Otherwise the call is accepted when
//! `conf > tau`, or when the verifier finds the reasoning consistent; a
//! negative verdict feeds its correction into the next round. After
//! `max_loops` rounds without acceptance the candidate is escalated to a
//! human.

mod screen;
mod state;

pub use screen::{screen_library, shortlist_size, Adjudication, Counts, RankedEntry, ScreeningFailure, ScreeningResult, ScreeningSettings};
pub use state::{DecidedBy, FinalDecision, LoopState, LoopStatus, RoundRecord};

use crate::agents::{Agents, BackendConfig, Candidate, PredictRequest, VerifyRequest};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OrchestratorError {
    #[error("invalid orchestrator config: {0}")]
    InvalidConfig(String),
    #[error("duplicate candidate id {0:?}")]
    DuplicateId(String),
    #[error("unknown candidate {0:?}")]
    UnknownCandidate(String),
    #[error("{0}")]
    Verdict(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OrchestratorConfig {
    /// Accept a prediction outright when `conf > tau`.
    pub tau: f64,
    pub max_loops: u32,
    pub top_fraction: f64,
    /// Worker threads for batch screening.
    pub parallelism: usize,
    pub predictor: BackendConfig,
    pub verifier: BackendConfig,
}

impl Default for OrchestratorConfig {
    fn default() -> Self {
        Self {
            tau: 0.7,
            max_loops: 3,
            top_fraction: 0.001,
            parallelism: 4,
            predictor: BackendConfig::default(),
            verifier: BackendConfig::default(),
        }
    }
}

impl OrchestratorConfig {
    pub fn validate(&self) -> Result<(), OrchestratorError> {
        let bad = |m: String| Err(OrchestratorError::InvalidConfig(m));
        if !(0.0..=1.0).contains(&self.tau) {
            return bad(format!("tau {} outside [0, 1]", self.tau));
        }
        if self.max_loops == 0 {
            return bad("max_loops must be >= 1".into());
        }
        if !(self.top_fraction > 0.0 && self.top_fraction <= 1.0) {
            return bad(format!("top_fraction {} outside (0, 1]", self.top_fraction));
        }
        if self.parallelism == 0 {
            return bad("parallelism must be >= 1".into());
        }
        Ok(())
    }
}

/// What a human reviewer receives for an escalated candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Escalation {
    pub candidate_id: String,
    pub smiles: String,
    pub transcript: Vec<RoundRecord>,
}

/// Sink for escalations. Returns the ticket id.
pub trait HumanPort: Send + Sync {
    fn post(&self, escalation: &Escalation) -> Result<String, String>;
}

/// In-memory queue; ticket ids are `Q1`, `Q2`, ... in posting order.
#[derive(Debug, Default)]
pub struct QueuePort {
    queue: Mutex<Vec<(String, Escalation)>>,
}

impl QueuePort {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn tickets(&self) -> Vec<(String, Escalation)> {
        self.queue.lock().clone()
    }

    pub fn len(&self) -> usize {
        self.queue.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl HumanPort for QueuePort {
    fn post(&self, escalation: &Escalation) -> Result<String, String> {
        let mut q = self.queue.lock();
        let id = format!("Q{}", q.len() + 1);
        q.push((id.clone(), escalation.clone()));
        Ok(id)
    }
}

/// Runs the loop without posting; an escalated result has no ticket yet.
pub(crate) fn run_loop(candidate: &Candidate, cfg: &OrchestratorConfig, agents: &Agents) -> LoopState {
    let mut state = LoopState::new(&candidate.id, &candidate.smiles);
    let mut feedback: Vec<String> = Vec::new();
    for round in 1..=cfg.max_loops {
        let mut out = match agents.predictor.predict(PredictRequest {
            candidate,
            round,
            feedback: &feedback,
        }) {
            Ok(o) => o,
            Err(e) => return state.failed(format!("predictor, round {round}: {e}")),
        };
        if !(0.0..=1.0).contains(&out.conf) {
            return state.failed(format!("predictor, round {round}: confidence {} outside [0, 1]", out.conf));
        }
        out.round = round;
        state.round = round;

        let Some(y_eff) = out.y_eff() else {
            state.transcript.push(RoundRecord { output: out, verdict: None });
            state.status = LoopStatus::RejectedToxic;
            state.final_decision = Some(FinalDecision::toxic(DecidedBy::SafetyGate));
            return state;
        };
        if out.conf > cfg.tau {
            state.transcript.push(RoundRecord { output: out, verdict: None });
            state.status = LoopStatus::Accepted;
            state.final_decision = Some(FinalDecision::non_toxic(y_eff, DecidedBy::Confidence));
            return state;
        }
        let verdict = match agents.verifier.verify(VerifyRequest {
            candidate_id: &candidate.id,
            round,
            r_pred: &out.r_pred,
            y_eff,
        }) {
            Ok(v) => v,
            Err(e) => {
                state.transcript.push(RoundRecord { output: out, verdict: None });
                return state.failed(format!("verifier, round {round}: {e}"));
            }
        };
        let consistent = verdict.is_consistent();
        if let Some(fb) = verdict.r_corr() {
            feedback.push(fb.to_string());
        }
        state.transcript.push(RoundRecord {
            output: out,
            verdict: Some(verdict),
        });
        if consistent {
            state.status = LoopStatus::Accepted;
            state.final_decision = Some(FinalDecision::non_toxic(y_eff, DecidedBy::Verifier));
            return state;
        }
    }
    state.status = LoopStatus::Escalated;
    state
}

pub(crate) fn escalate(state: &mut LoopState, port: &dyn HumanPort) {
    let esc = Escalation {
        candidate_id: state.candidate_id.clone(),
        smiles: state.smiles.clone(),
        transcript: state.transcript.clone(),
    };
    match port.post(&esc) {
        Ok(id) => state.ticket_id = Some(id),
        Err(e) => {
            let s = std::mem::replace(state, LoopState::new("", ""));
            *state = s.failed(format!("escalation could not be posted: {e}"));
        }
    }
}

/// Runs one candidate to a terminal state, posting a ticket on escalation.
pub fn evaluate_candidate(
    candidate: &Candidate,
    cfg: &OrchestratorConfig,
    agents: &Agents,
    port: &dyn HumanPort,
) -> LoopState {
    let mut state = run_loop(candidate, cfg, agents);
    if state.status == LoopStatus::Escalated {
        escalate(&mut state, port);
    }
    state
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::{PredictScript, ScriptedBackend, ScriptedFixture, VerifierVerdict};
    use crate::chem::{Fingerprint, FingerprintParams};
    use std::sync::Arc;

    fn setup(f: ScriptedFixture) -> (Arc<ScriptedBackend>, Agents) {
        let b = Arc::new(ScriptedBackend::new(f));
        let agents = Agents::new(b.clone(), b.clone(), FingerprintParams::default());
        (b, agents)
    }

    fn cand(id: &str) -> Candidate {
        Candidate {
            id: id.into(),
            smiles: "CCO".into(),
            fingerprint: Fingerprint::empty(2048, 2),
        }
    }

    #[test]
    fn confident_round_one_is_accepted_without_verifier() {
        let mut f = ScriptedFixture::new();
        f.push_predict("L1", 1, PredictScript::safe(9, 0.9));
        let (b, agents) = setup(f);
        let port = QueuePort::new();
        let s = evaluate_candidate(&cand("L1"), &OrchestratorConfig::default(), &agents, &port);
        assert_eq!(s.status, LoopStatus::Accepted);
        assert_eq!(s.final_decision.unwrap().decided_by(), DecidedBy::Confidence);
        assert_eq!(s.transcript.len(), 1);
        assert_eq!(b.verify_calls(), 0);
        s.check_invariants(3).unwrap();
    }

    #[test]
    fn toxic_short_circuits() {
        let mut f = ScriptedFixture::new();
        f.push_predict("L1", 1, PredictScript::unsafe_(0.1));
        let (b, agents) = setup(f);
        let s = evaluate_candidate(&cand("L1"), &OrchestratorConfig::default(), &agents, &QueuePort::new());
        assert_eq!(s.status, LoopStatus::RejectedToxic);
        assert!(s.final_decision.unwrap().efficiency().is_none());
        assert_eq!(b.verify_calls(), 0);
    }

    #[test]
    fn always_disagree_escalates_after_three_rounds() {
        let mut f = ScriptedFixture::new();
        for r in 1..=3 {
            f.push_predict("L1", r, PredictScript::safe(5, 0.2));
            f.push_verify("L1", r, VerifierVerdict::inconsistent(format!("fix round {r}"), vec![]));
        }
        let (b, agents) = setup(f);
        let port = QueuePort::new();
        let s = evaluate_candidate(&cand("L1"), &OrchestratorConfig::default(), &agents, &port);
        assert_eq!(s.status, LoopStatus::Escalated);
        assert_eq!((b.predict_calls(), b.verify_calls()), (3, 3));
        assert_eq!(port.len(), 1);
        assert_eq!(s.ticket_id.as_deref(), Some("Q1"));
        assert_eq!(port.tickets()[0].1.transcript.len(), 3);
        assert_eq!(s.feedback(), ["fix round 1", "fix round 2", "fix round 3"]);
        s.check_invariants(3).unwrap();
    }

    #[test]
    fn boundary_confidence_goes_to_verifier() {
        let mut f = ScriptedFixture::new();
        f.push_predict("L1", 1, PredictScript::safe(4, 0.7))
            .push_verify("L1", 1, VerifierVerdict::consistent(vec![]));
        let (b, agents) = setup(f);
        let s = evaluate_candidate(&cand("L1"), &OrchestratorConfig::default(), &agents, &QueuePort::new());
        assert_eq!(s.final_decision.unwrap().decided_by(), DecidedBy::Verifier);
        assert_eq!(b.verify_calls(), 1);
    }

    /// Records the feedback each round receives.
    struct Echo(Mutex<Vec<Vec<String>>>);

    impl crate::agents::Predictor for Echo {
        fn predict(&self, req: PredictRequest<'_>) -> Result<crate::agents::PredictorOutput, crate::agents::AgentError> {
            self.0.lock().push(req.feedback.to_vec());
            Ok(crate::agents::PredictorOutput {
                round: req.round,
                decision: crate::agents::Decision::Safe {
                    efficiency: crate::EfficiencyScore::new(2).unwrap(),
                    p_eff: None,
                },
                conf: 0.0,
                r_pred: String::new(),
            })
        }
    }

    #[test]
    fn feedback_accumulates_in_order() {
        let mut f = ScriptedFixture::new();
        for r in 1..=3 {
            f.push_verify("L1", r, VerifierVerdict::inconsistent(format!("c{r}"), vec![]));
        }
        let echo = Arc::new(Echo(Mutex::new(Vec::new())));
        let agents = Agents::new(echo.clone(), Arc::new(ScriptedBackend::new(f)), FingerprintParams::default());
        evaluate_candidate(&cand("L1"), &OrchestratorConfig::default(), &agents, &QueuePort::new());
        let seen = echo.0.lock().clone();
        assert_eq!(seen, vec![vec![], vec!["c1".to_string()], vec!["c1".into(), "c2".into()]]);
    }

    #[test]
    fn backend_error_is_failure_not_escalation() {
        let (_, agents) = setup(ScriptedFixture::new());
        let port = QueuePort::new();
        let s = evaluate_candidate(&cand("L1"), &OrchestratorConfig::default(), &agents, &port);
        assert_eq!(s.status, LoopStatus::Failed);
        assert!(s.failure.unwrap().contains("no predict fixture entry"));
        assert!(port.is_empty());
    }
}
