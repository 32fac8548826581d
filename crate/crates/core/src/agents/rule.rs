use super::trace::ReasoningTrace;
use super::{AgentError, CheckResult, Verifier, VerifierVerdict, VerifyRequest};
use crate::numerics;
use crate::score::EfficiencyScore;
use crate::surrogate::TOP_FEATURES;

pub const UNPARSEABLE_TRACE: &str = "unparseable trace";

/// Allowed gap between the stated confidence and the one recomputed from
/// the stated distribution.
pub const CONF_TOLERANCE: f64 = 1e-6;

pub const CHECK_NAMES: [&str; 5] = [
    "score-mismatch",
    "argmax-mismatch",
    "confidence-mismatch",
    "too-many-features",
    "margin-sign",
];

/// Deterministic consistency checks over the surrogate's reasoning trace.
/// A pure function of `(r_pred, y_eff)`.
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleVerifier;

impl RuleVerifier {
    pub fn check(r_pred: &str, y_eff: EfficiencyScore) -> VerifierVerdict {
        let trace = match ReasoningTrace::parse(r_pred) {
            Ok(t) => t,
            Err(e) => {
                return VerifierVerdict::inconsistent(
                    UNPARSEABLE_TRACE,
                    vec![CheckResult {
                        name: "parse".into(),
                        passed: false,
                        detail: Some(e),
                    }],
                )
            }
        };
        let claimed = y_eff.get();
        let mut checks = Vec::with_capacity(CHECK_NAMES.len());
        let mut push = |name: &str, failure: Option<String>| {
            checks.push(CheckResult {
                name: name.to_string(),
                passed: failure.is_none(),
                detail: failure,
            })
        };

        push(
            "score-mismatch",
            match trace.score {
                Some(s) if s == claimed => None,
                Some(s) => Some(format!("trace states score {s}, claimed {claimed}")),
                None => Some(format!("trace states no score, claimed {claimed}")),
            },
        );

        let dist = trace.distribution.map(|d| (numerics::confidence(&d), d));
        push(
            "argmax-mismatch",
            match &dist {
                Some((_, d)) => {
                    let top = numerics::ProbVector::new(*d).map(|p| p.argmax() + 1);
                    match top {
                        Ok(t) if t as u8 == claimed => None,
                        Ok(t) => Some(format!("stated distribution peaks at {t}, claimed {claimed}")),
                        Err(e) => Some(format!("stated distribution is invalid: {e}")),
                    }
                }
                None => Some("trace states no distribution".into()),
            },
        );

        push(
            "confidence-mismatch",
            match &dist {
                Some((Ok(c), _)) if (c - trace.confidence).abs() <= CONF_TOLERANCE => None,
                Some((Ok(c), _)) => Some(format!(
                    "stated confidence {} but the distribution gives {c}",
                    trace.confidence
                )),
                Some((Err(e), _)) => Some(format!("cannot recompute confidence: {e}")),
                None => Some("trace states no distribution".into()),
            },
        );

        let n = trace.top_features.len();
        push(
            "too-many-features",
            (n > TOP_FEATURES).then(|| format!("{n} features listed, at most {TOP_FEATURES} allowed")),
        );

        // a score is a non-toxic claim, so the toxicity gate must not have fired
        push(
            "margin-sign",
            (trace.toxic || trace.toxicity_margin > 0.0).then(|| {
                format!(
                    "score given but trace is {} with toxicity margin {}",
                    if trace.toxic { "toxic" } else { "non-toxic" },
                    trace.toxicity_margin
                )
            }),
        );

        let failed: Vec<String> = checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{}: {}", c.name, c.detail.as_deref().unwrap_or("")))
            .collect();
        if failed.is_empty() {
            VerifierVerdict::consistent(checks)
        } else {
            VerifierVerdict::inconsistent(format!("failed checks: {}", failed.join("; ")), checks)
        }
    }
}

impl Verifier for RuleVerifier {
    fn verify(&self, req: VerifyRequest<'_>) -> Result<VerifierVerdict, AgentError> {
        Ok(Self::check(req.r_pred, req.y_eff))
    }
}
