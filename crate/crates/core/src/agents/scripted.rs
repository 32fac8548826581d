//! Fixture-replay backend. One JSON object per line:
//!
//! ```text
//! {"candidate_id":"L1","round":1,"kind":"predict","payload":{"verdict":"safe","efficiency":9,"conf":0.9}}
//! {"candidate_id":"L1","round":1,"kind":"verify","payload":{"y_ver":0,"r_corr":"score too high"}}
//! ```

use super::{
    AgentError, Decision, PredictRequest, Predictor, PredictorOutput, Verifier, VerifierVerdict, VerifyRequest,
};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FixtureKind {
    Predict,
    Verify,
}

impl fmt::Display for FixtureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FixtureKind::Predict => "predict",
            FixtureKind::Verify => "verify",
        })
    }
}

/// Scripted predictor answer; the round comes from the fixture key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScript")]
pub struct PredictScript {
    #[serde(flatten)]
    pub decision: Decision,
    pub conf: f64,
    #[serde(default)]
    pub r_pred: String,
}

impl PredictScript {
    pub fn safe(efficiency: u8, conf: f64) -> Self {
        Self {
            decision: Decision::Safe {
                efficiency: crate::EfficiencyScore::new(efficiency).expect("score in 1..=10"),
                p_eff: None,
            },
            conf,
            r_pred: String::new(),
        }
    }

    pub fn unsafe_(conf: f64) -> Self {
        Self {
            decision: Decision::Unsafe,
            conf,
            r_pred: String::new(),
        }
    }
}

// flatten and deny_unknown_fields do not combine, so strict parsing goes
// through an explicit shape
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScript {
    verdict: String,
    #[serde(default)]
    efficiency: Option<crate::EfficiencyScore>,
    #[serde(default)]
    p_eff: Option<crate::numerics::ProbVector>,
    conf: f64,
    #[serde(default)]
    r_pred: String,
}

impl TryFrom<RawScript> for PredictScript {
    type Error = String;

    fn try_from(r: RawScript) -> Result<Self, String> {
        let decision = match (r.verdict.as_str(), r.efficiency) {
            ("unsafe", None) if r.p_eff.is_none() => Decision::Unsafe,
            ("unsafe", _) => return Err("an unsafe verdict must not carry efficiency fields".into()),
            ("safe", Some(efficiency)) => Decision::Safe {
                efficiency,
                p_eff: r.p_eff,
            },
            ("safe", None) => return Err("a safe verdict needs an efficiency".into()),
            (other, _) => return Err(format!("unknown verdict {other:?}")),
        };
        Ok(Self {
            decision,
            conf: r.conf,
            r_pred: r.r_pred,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureEntry {
    pub candidate_id: String,
    pub round: u32,
    pub kind: FixtureKind,
    pub payload: serde_json::Value,
}

type Key = (String, u32);

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ScriptedFixture {
    predict: BTreeMap<Key, PredictScript>,
    verify: BTreeMap<Key, VerifierVerdict>,
}

impl ScriptedFixture {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_predict(&mut self, id: &str, round: u32, script: PredictScript) -> &mut Self {
        self.predict.insert((id.to_string(), round), script);
        self
    }

    pub fn push_verify(&mut self, id: &str, round: u32, verdict: VerifierVerdict) -> &mut Self {
        self.verify.insert((id.to_string(), round), verdict);
        self
    }

    pub fn parse(text: &str) -> Result<Self, AgentError> {
        let mut out = Self::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: String| AgentError::BadFixture { line: i + 1, reason };
            let e: FixtureEntry = serde_json::from_str(line).map_err(|e| bad(e.to_string()))?;
            if e.round == 0 {
                return Err(bad("rounds start at 1".into()));
            }
            let key = (e.candidate_id, e.round);
            let dup = match e.kind {
                FixtureKind::Predict => {
                    let s: PredictScript = serde_json::from_value(e.payload).map_err(|e| bad(e.to_string()))?;
                    if !(0.0..=1.0).contains(&s.conf) {
                        return Err(bad(format!("conf {} outside [0, 1]", s.conf)));
                    }
                    out.predict.insert(key.clone(), s).is_some()
                }
                FixtureKind::Verify => {
                    let v: VerifierVerdict = serde_json::from_value(e.payload).map_err(|e| bad(e.to_string()))?;
                    out.verify.insert(key.clone(), v).is_some()
                }
            };
            if dup {
                return Err(bad(format!("duplicate {} entry for {:?} round {}", e.kind, key.0, key.1)));
            }
        }
        Ok(out)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AgentError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn to_jsonl(&self) -> String {
        let mut s = String::new();
        let entries = self
            .predict
            .iter()
            .map(|(k, v)| (k, FixtureKind::Predict, serde_json::to_value(v)))
            .chain(self.verify.iter().map(|(k, v)| (k, FixtureKind::Verify, serde_json::to_value(v))));
        let mut rows: Vec<_> = entries.collect();
        rows.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        for ((id, round), kind, payload) in rows {
            let e = FixtureEntry {
                candidate_id: id.clone(),
                round: *round,
                kind,
                payload: payload.expect("fixture payload serializes"),
            };
            s.push_str(&serde_json::to_string(&e).expect("fixture entry serializes"));
            s.push('\n');
        }
        s
    }
}

/// Replays a [`ScriptedFixture`] and counts calls.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    fixture: ScriptedFixture,
    predict_calls: AtomicUsize,
    verify_calls: AtomicUsize,
    per_candidate: parking_lot::Mutex<HashMap<String, (usize, usize)>>,
}

impl ScriptedBackend {
    pub fn new(fixture: ScriptedFixture) -> Self {
        Self {
            fixture,
            ..Default::default()
        }
    }

    pub fn predict_calls(&self) -> usize {
        self.predict_calls.load(Ordering::SeqCst)
    }

    pub fn verify_calls(&self) -> usize {
        self.verify_calls.load(Ordering::SeqCst)
    }

    /// `(predict calls, verify calls)` made for one candidate.
    pub fn calls_for(&self, id: &str) -> (usize, usize) {
        self.per_candidate.lock().get(id).copied().unwrap_or_default()
    }
}

impl Predictor for ScriptedBackend {
    fn predict(&self, req: PredictRequest<'_>) -> Result<PredictorOutput, AgentError> {
        self.predict_calls.fetch_add(1, Ordering::SeqCst);
        self.per_candidate.lock().entry(req.candidate.id.clone()).or_default().0 += 1;
        let s = self
            .fixture
            .predict
            .get(&(req.candidate.id.clone(), req.round))
            .ok_or_else(|| AgentError::MissingFixture {
                candidate: req.candidate.id.clone(),
                round: req.round,
                kind: FixtureKind::Predict,
            })?;
        Ok(PredictorOutput {
            round: req.round,
            decision: s.decision.clone(),
            conf: s.conf,
            r_pred: s.r_pred.clone(),
        })
    }
}

impl Verifier for ScriptedBackend {
    fn verify(&self, req: VerifyRequest<'_>) -> Result<VerifierVerdict, AgentError> {
        self.verify_calls.fetch_add(1, Ordering::SeqCst);
        self.per_candidate.lock().entry(req.candidate_id.to_string()).or_default().1 += 1;
        self.fixture
            .verify
            .get(&(req.candidate_id.to_string(), req.round))
            .cloned()
            .ok_or_else(|| AgentError::MissingFixture {
                candidate: req.candidate_id.to_string(),
                round: req.round,
                kind: FixtureKind::Verify,
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Candidate;
    use crate::chem::Fingerprint;

    fn cand(id: &str) -> Candidate {
        Candidate {
            id: id.into(),
            smiles: "C".into(),
            fingerprint: Fingerprint::empty(256, 2),
        }
    }

    #[test]
    fn fixture_identity() {
        let text = r#"{"candidate_id":"L1","round":1,"kind":"predict","payload":{"verdict":"safe","efficiency":9,"conf":0.9}}"#;
        let b = ScriptedBackend::new(ScriptedFixture::parse(text).unwrap());
        let c = cand("L1");
        let out = b
            .predict(PredictRequest {
                candidate: &c,
                round: 1,
                feedback: &[],
            })
            .unwrap();
        assert!(!out.y_tox());
        assert_eq!(out.y_eff().unwrap().get(), 9);
        assert_eq!(out.conf, 0.9);
        assert_eq!(b.predict_calls(), 1);

        let miss = b.predict(PredictRequest {
            candidate: &c,
            round: 2,
            feedback: &[],
        });
        assert!(matches!(miss, Err(AgentError::MissingFixture { round: 2, .. })));
        assert_eq!(b.calls_for("L1"), (2, 0));
    }

    #[test]
    fn jsonl_round_trip() {
        let mut f = ScriptedFixture::new();
        f.push_predict("a", 1, PredictScript::safe(3, 0.2))
            .push_verify("a", 1, VerifierVerdict::inconsistent("too low", vec![]))
            .push_predict("b", 1, PredictScript::unsafe_(0.95));
        assert_eq!(ScriptedFixture::parse(&f.to_jsonl()).unwrap(), f);
    }

    #[test]
    fn rejects_bad_lines() {
        let toxic_with_score = r#"{"candidate_id":"x","round":1,"kind":"predict","payload":{"verdict":"unsafe","efficiency":3,"conf":0.5}}"#;
        assert!(ScriptedFixture::parse(toxic_with_score).is_err());
        let dup = r#"{"candidate_id":"x","round":1,"kind":"verify","payload":{"y_ver":1}}
{"candidate_id":"x","round":1,"kind":"verify","payload":{"y_ver":1}}"#;
        assert!(matches!(ScriptedFixture::parse(dup), Err(AgentError::BadFixture { line: 2, .. })));
        let bad_conf = r#"{"candidate_id":"x","round":1,"kind":"predict","payload":{"verdict":"unsafe","conf":1.5}}"#;
        assert!(ScriptedFixture::parse(bad_conf).is_err());
    }
}
