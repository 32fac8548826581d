use crate::chem::Fingerprint;
use crate::numerics::ProbVector;
use crate::score::EfficiencyScore;
use serde::{Deserialize, Serialize};

/// The predictor's safety-gated call. A toxic call has no efficiency slot
/// at all, so an "efficient but toxic" output cannot be represented.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum Decision {
    Unsafe,
    Safe {
        efficiency: EfficiencyScore,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        p_eff: Option<ProbVector>,
    },
}

/// One round of predictor output: `(y_tox, y_eff, r_pred, conf)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorOutput {
    pub round: u32,
    #[serde(flatten)]
    pub decision: Decision,
    pub conf: f64,
    pub r_pred: String,
}

impl PredictorOutput {
    pub fn y_tox(&self) -> bool {
        matches!(self.decision, Decision::Unsafe)
    }

    pub fn y_eff(&self) -> Option<EfficiencyScore> {
        match self.decision {
            Decision::Safe { efficiency, .. } => Some(efficiency),
            Decision::Unsafe => None,
        }
    }

    pub fn p_eff(&self) -> Option<&ProbVector> {
        match &self.decision {
            Decision::Safe { p_eff, .. } => p_eff.as_ref(),
            Decision::Unsafe => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
}

/// Verifier judgement of reasoning/score consistency. Corrective feedback
/// exists exactly when the verdict is negative.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawVerdict", into = "RawVerdict")]
pub struct VerifierVerdict {
    r_corr: Option<String>,
    pub checks: Vec<CheckResult>,
}

impl VerifierVerdict {
    pub fn consistent(checks: Vec<CheckResult>) -> Self {
        Self { r_corr: None, checks }
    }

    pub fn inconsistent(r_corr: impl Into<String>, checks: Vec<CheckResult>) -> Self {
        Self {
            r_corr: Some(r_corr.into()),
            checks,
        }
    }

    /// `y_ver`: 1 when the reasoning is consistent with the score.
    pub fn y_ver(&self) -> u8 {
        if self.r_corr.is_none() {
            1
        } else {
            0
        }
    }

    pub fn is_consistent(&self) -> bool {
        self.r_corr.is_none()
    }

    pub fn r_corr(&self) -> Option<&str> {
        self.r_corr.as_deref()
    }
}

#[derive(Serialize, Deserialize)]
struct RawVerdict {
    y_ver: u8,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    r_corr: Option<String>,
    #[serde(default)]
    checks: Vec<CheckResult>,
}

impl TryFrom<RawVerdict> for VerifierVerdict {
    type Error = String;

    fn try_from(raw: RawVerdict) -> Result<Self, Self::Error> {
        match (raw.y_ver, raw.r_corr) {
            (1, None) => Ok(Self::consistent(raw.checks)),
            (1, Some(_)) => Err("y_ver=1 must not carry r_corr".into()),
            (0, Some(fb)) if !fb.is_empty() => Ok(Self::inconsistent(fb, raw.checks)),
            (0, _) => Err("y_ver=0 requires non-empty r_corr".into()),
            (v, _) => Err(format!("y_ver must be 0 or 1, got {v}")),
        }
    }
}

impl From<VerifierVerdict> for RawVerdict {
    fn from(v: VerifierVerdict) -> Self {
        RawVerdict {
            y_ver: v.y_ver(),
            r_corr: v.r_corr,
            checks: v.checks,
        }
    }
}

/// A molecule under evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub id: String,
    pub smiles: String,
    pub fingerprint: Fingerprint,
}
