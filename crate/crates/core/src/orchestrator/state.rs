use crate::agents::{PredictorOutput, VerifierVerdict};
use crate::app::HumanVerdict;
use crate::score::EfficiencyScore;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub output: PredictorOutput,
    /// Absent when the round ended before verification (toxic call or
    /// confidence above threshold).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<VerifierVerdict>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LoopStatus {
    Accepted,
    RejectedToxic,
    Escalated,
    ResolvedByHuman,
    /// A backend or input error stopped the loop. Not an escalation.
    Failed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecidedBy {
    Confidence,
    Verifier,
    /// A toxic call ends the loop before any confidence or verifier test.
    SafetyGate,
    Human,
}

/// Terminal call for a candidate. A toxic final never holds an efficiency;
/// the constructors and the deserializer both enforce it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawFinal", into = "RawFinal")]
pub struct FinalDecision {
    efficiency: Option<EfficiencyScore>,
    decided_by: DecidedBy,
}

impl FinalDecision {
    pub fn toxic(decided_by: DecidedBy) -> Self {
        Self {
            efficiency: None,
            decided_by,
        }
    }

    pub fn non_toxic(efficiency: EfficiencyScore, decided_by: DecidedBy) -> Self {
        Self {
            efficiency: Some(efficiency),
            decided_by,
        }
    }

    pub fn is_toxic(&self) -> bool {
        self.efficiency.is_none()
    }

    pub fn efficiency(&self) -> Option<EfficiencyScore> {
        self.efficiency
    }

    pub fn decided_by(&self) -> DecidedBy {
        self.decided_by
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFinal {
    toxic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    efficiency: Option<EfficiencyScore>,
    decided_by: DecidedBy,
}

impl TryFrom<RawFinal> for FinalDecision {
    type Error = String;

    fn try_from(r: RawFinal) -> Result<Self, String> {
        match (r.toxic, r.efficiency) {
            (true, None) => Ok(Self::toxic(r.decided_by)),
            (false, Some(e)) => Ok(Self::non_toxic(e, r.decided_by)),
            (true, Some(_)) => Err("a toxic final decision cannot carry an efficiency".into()),
            (false, None) => Err("a non-toxic final decision needs an efficiency".into()),
        }
    }
}

impl From<FinalDecision> for RawFinal {
    fn from(f: FinalDecision) -> Self {
        RawFinal {
            toxic: f.is_toxic(),
            efficiency: f.efficiency,
            decided_by: f.decided_by,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopState {
    pub candidate_id: String,
    pub smiles: String,
    /// Rounds executed; equals `transcript.len()`.
    pub round: u32,
    pub transcript: Vec<RoundRecord>,
    pub status: LoopStatus,
    #[serde(rename = "final", default, skip_serializing_if = "Option::is_none")]
    pub final_decision: Option<FinalDecision>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl LoopState {
    pub(crate) fn new(candidate_id: &str, smiles: &str) -> Self {
        Self {
            candidate_id: candidate_id.to_string(),
            smiles: smiles.to_string(),
            round: 0,
            transcript: Vec::new(),
            status: LoopStatus::Failed,
            final_decision: None,
            ticket_id: None,
            failure: None,
        }
    }

    pub(crate) fn failed(mut self, why: impl Into<String>) -> Self {
        self.status = LoopStatus::Failed;
        self.failure = Some(why.into());
        self.final_decision = None;
        self
    }

    pub fn last_output(&self) -> Option<&PredictorOutput> {
        self.transcript.last().map(|r| &r.output)
    }

    /// Every corrective feedback text in round order.
    pub fn feedback(&self) -> Vec<&str> {
        self.transcript
            .iter()
            .filter_map(|r| r.verdict.as_ref().and_then(|v| v.r_corr()))
            .collect()
    }

    /// Applies a human verdict to an escalated state. The final decision is
    /// the verdict, verbatim.
    pub fn apply_verdict(&mut self, v: &HumanVerdict) -> Result<(), String> {
        v.validate()?;
        if self.status != LoopStatus::Escalated {
            return Err(format!(
                "candidate {} is {:?}, only escalated candidates take a verdict",
                self.candidate_id, self.status
            ));
        }
        self.final_decision = Some(match v.efficiency {
            None => FinalDecision::toxic(DecidedBy::Human),
            Some(e) => FinalDecision::non_toxic(e, DecidedBy::Human),
        });
        self.status = LoopStatus::ResolvedByHuman;
        Ok(())
    }

    /// The call this state would stand for if nobody reviewed it: the final
    /// decision where one exists, otherwise the last round's prediction
    /// taken as-is. `None` for failed states.
    pub fn forced_final(&self) -> Option<FinalDecision> {
        if let Some(f) = self.final_decision {
            return Some(f);
        }
        if self.status == LoopStatus::Failed {
            return None;
        }
        let out = self.last_output()?;
        Some(match out.y_eff() {
            Some(e) => FinalDecision::non_toxic(e, DecidedBy::Confidence),
            None => FinalDecision::toxic(DecidedBy::SafetyGate),
        })
    }

    /// Checks the structural rules every terminal state must satisfy.
    pub fn check_invariants(&self, max_loops: u32) -> Result<(), String> {
        if self.round as usize != self.transcript.len() {
            return Err("round counter differs from transcript length".into());
        }
        if self.round > max_loops {
            return Err(format!("{} rounds exceed max_loops {max_loops}", self.round));
        }
        for (i, r) in self.transcript.iter().enumerate() {
            if r.output.round as usize != i + 1 {
                return Err(format!("transcript entry {i} is labelled round {}", r.output.round));
            }
            if r.output.y_tox() && (r.output.y_eff().is_some() || r.verdict.is_some()) {
                return Err("toxic round carries an efficiency or a verdict".into());
            }
        }
        let f = self.final_decision;
        let by = f.map(|f| f.decided_by());
        let ok = match self.status {
            LoopStatus::Accepted => {
                matches!(by, Some(DecidedBy::Confidence | DecidedBy::Verifier)) && !f.unwrap().is_toxic()
            }
            LoopStatus::RejectedToxic => f.is_some_and(|f| f.is_toxic() && f.efficiency().is_none()),
            LoopStatus::Escalated => f.is_none() && self.round == max_loops,
            LoopStatus::ResolvedByHuman => by == Some(DecidedBy::Human),
            LoopStatus::Failed => f.is_none() && self.failure.is_some(),
        };
        if ok {
            Ok(())
        } else {
            Err(format!("status {:?} inconsistent with final {:?}", self.status, f))
        }
    }
}
