use super::state::{DecidedBy, FinalDecision, LoopState, LoopStatus};
use super::{escalate, run_loop, HumanPort, OrchestratorConfig, OrchestratorError};
use crate::agents::Agents;
use crate::app::HumanVerdict;
use crate::dataset::LibraryEntry;
use crate::evalkit::EvalPair;
use crate::score::EfficiencyScore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::fmt::Write;

/// Loop settings echoed into the result. Backend locations and the worker
/// count are left out: they do not change the outcome and would make the
/// digest depend on file paths and machine size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScreeningSettings {
    pub tau: f64,
    pub max_loops: u32,
    pub top_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub id: String,
    pub smiles: String,
    pub efficiency: EfficiencyScore,
    /// Predictor confidence of the last round.
    pub conf: f64,
    pub decided_by: DecidedBy,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub accepted_by_confidence: usize,
    pub accepted_by_verifier: usize,
    pub rejected_toxic: usize,
    /// Escalated and still waiting for a verdict.
    pub escalated: usize,
    pub resolved_by_human: usize,
    pub failed: usize,
}

impl Counts {
    pub fn total(&self) -> usize {
        self.accepted_by_confidence
            + self.accepted_by_verifier
            + self.rejected_toxic
            + self.escalated
            + self.resolved_by_human
            + self.failed
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScreeningFailure {
    pub id: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScreeningResult {
    pub settings: ScreeningSettings,
    /// One terminal state per candidate, in input order.
    pub states: Vec<LoopState>,
    /// Accepted and human-resolved non-toxic candidates by
    /// (efficiency desc, conf desc, id asc).
    pub ranked: Vec<RankedEntry>,
    pub shortlist_size: usize,
    pub shortlist: Vec<String>,
    pub counts: Counts,
    pub failures: Vec<ScreeningFailure>,
    pub pending_tickets: Vec<String>,
    /// Set once no ticket is pending, or by an explicit
    /// [`ScreeningResult::finalize_with_pending`].
    pub finalized: bool,
}

/// Whose call counts for escalated candidates when scoring a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Adjudication {
    /// Human verdicts where present.
    WithHuman,
    /// The last-round prediction, as if nobody had reviewed.
    NoHuman,
}

/// `ceil(fraction · n)` that does not round up on float noise
/// (`0.1 · 30` is `3.0000000000000004`).
pub fn shortlist_size(fraction: f64, n: usize) -> usize {
    let x = fraction * n as f64;
    let r = x.round();
    if (x - r).abs() <= 1e-9 * r.max(1.0) {
        r as usize
    } else {
        x.ceil() as usize
    }
}

impl ScreeningResult {
    fn assemble(settings: ScreeningSettings, states: Vec<LoopState>, finalized: bool) -> Self {
        let mut r = Self {
            settings,
            states,
            ranked: Vec::new(),
            shortlist_size: 0,
            shortlist: Vec::new(),
            counts: Counts::default(),
            failures: Vec::new(),
            pending_tickets: Vec::new(),
            finalized,
        };
        r.rebuild();
        r
    }

    /// Rebuilds a result from terminal states, e.g. when replaying a log.
    pub fn from_states(settings: ScreeningSettings, states: Vec<LoopState>) -> Self {
        Self::assemble(settings, states, false)
    }

    /// Recomputes ranking, shortlist, counts and the pending list from the
    /// states.
    fn rebuild(&mut self) {
        let mut counts = Counts::default();
        let mut ranked = Vec::new();
        let mut failures = Vec::new();
        let mut pending = Vec::new();
        for s in &self.states {
            match s.status {
                LoopStatus::Accepted => match s.final_decision.map(|f| f.decided_by()) {
                    Some(DecidedBy::Verifier) => counts.accepted_by_verifier += 1,
                    _ => counts.accepted_by_confidence += 1,
                },
                LoopStatus::RejectedToxic => counts.rejected_toxic += 1,
                LoopStatus::Escalated => {
                    counts.escalated += 1;
                    pending.extend(s.ticket_id.clone());
                }
                LoopStatus::ResolvedByHuman => counts.resolved_by_human += 1,
                LoopStatus::Failed => {
                    counts.failed += 1;
                    failures.push(ScreeningFailure {
                        id: s.candidate_id.clone(),
                        error: s.failure.clone().unwrap_or_default(),
                    });
                }
            }
            if !matches!(s.status, LoopStatus::Accepted | LoopStatus::ResolvedByHuman) {
                continue;
            }
            if let Some(f) = s.final_decision.filter(|f| !f.is_toxic()) {
                ranked.push(RankedEntry {
                    id: s.candidate_id.clone(),
                    smiles: s.smiles.clone(),
                    efficiency: f.efficiency().expect("non-toxic final has efficiency"),
                    conf: s.last_output().map_or(0.0, |o| o.conf),
                    decided_by: f.decided_by(),
                });
            }
        }
        ranked.sort_by(|a, b| {
            b.efficiency
                .cmp(&a.efficiency)
                .then(b.conf.total_cmp(&a.conf))
                .then_with(|| a.id.cmp(&b.id))
        });
        self.shortlist_size = shortlist_size(self.settings.top_fraction, self.states.len());
        self.shortlist = ranked.iter().take(self.shortlist_size).map(|e| e.id.clone()).collect();
        self.ranked = ranked;
        self.counts = counts;
        self.failures = failures;
        self.finalized |= pending.is_empty();
        self.pending_tickets = pending;
    }

    pub fn state(&self, candidate_id: &str) -> Option<&LoopState> {
        self.states.iter().find(|s| s.candidate_id == candidate_id)
    }

    /// Applies a human verdict and re-ranks.
    pub fn apply_verdict(&mut self, candidate_id: &str, v: &HumanVerdict) -> Result<&LoopState, OrchestratorError> {
        let i = self
            .states
            .iter()
            .position(|s| s.candidate_id == candidate_id)
            .ok_or_else(|| OrchestratorError::UnknownCandidate(candidate_id.to_string()))?;
        self.states[i].apply_verdict(v).map_err(OrchestratorError::Verdict)?;
        self.rebuild();
        Ok(&self.states[i])
    }

    /// Accepts the ranking as final while tickets are still open.
    pub fn finalize_with_pending(&mut self) {
        self.finalized = true;
    }

    /// Fraction of candidates with a terminal decision (pending escalations
    /// are the only undecided ones).
    pub fn completion(&self) -> f64 {
        if self.states.is_empty() {
            1.0
        } else {
            1.0 - self.counts.escalated as f64 / self.states.len() as f64
        }
    }

    /// sha256 over the canonical JSON form. The result holds no timestamps.
    pub fn digest(&self) -> String {
        let json = serde_json::to_vec(self).expect("screening result serializes");
        hex::encode(Sha256::digest(&json))
    }

    /// Pairs for [`crate::evalkit::compute_metrics`]. `truth` maps candidate
    /// ids to `(toxic, efficiency)`; candidates without truth and failed
    /// candidates are skipped.
    pub fn eval_pairs(
        &self,
        truth: &BTreeMap<String, (bool, Option<EfficiencyScore>)>,
        mode: Adjudication,
    ) -> Vec<EvalPair> {
        self.states
            .iter()
            .filter_map(|s| {
                let &(true_tox, true_eff) = truth.get(&s.candidate_id)?;
                let call: FinalDecision = match (mode, s.status) {
                    (Adjudication::NoHuman, LoopStatus::ResolvedByHuman) => {
                        let out = s.last_output()?;
                        match out.y_eff() {
                            Some(e) => FinalDecision::non_toxic(e, DecidedBy::Confidence),
                            None => FinalDecision::toxic(DecidedBy::SafetyGate),
                        }
                    }
                    _ => s.forced_final()?,
                };
                Some(EvalPair {
                    id: s.candidate_id.clone(),
                    true_tox,
                    pred_tox: call.is_toxic(),
                    true_eff,
                    pred_eff: call.efficiency(),
                })
            })
            .collect()
    }

    /// Plain-text summary: counts, then the shortlist.
    pub fn summary_table(&self) -> String {
        let c = &self.counts;
        let mut s = String::new();
        let _ = writeln!(s, "candidates              {:>8}", self.states.len());
        let _ = writeln!(s, "accepted (confidence)   {:>8}", c.accepted_by_confidence);
        let _ = writeln!(s, "accepted (verifier)     {:>8}", c.accepted_by_verifier);
        let _ = writeln!(s, "rejected toxic          {:>8}", c.rejected_toxic);
        let _ = writeln!(s, "escalated (pending)     {:>8}", c.escalated);
        let _ = writeln!(s, "resolved by human       {:>8}", c.resolved_by_human);
        let _ = writeln!(s, "failed                  {:>8}", c.failed);
        let _ = writeln!(s, "shortlist size          {:>8}", self.shortlist_size);
        let _ = writeln!(s);
        let _ = writeln!(s, "{:<5} {:<16} {:>4} {:>8}  {:<10} smiles", "rank", "id", "eff", "conf", "decided_by");
        for (i, e) in self.ranked.iter().take(self.shortlist_size).enumerate() {
            let by = serde_json::to_value(e.decided_by).ok();
            let by = by.as_ref().and_then(|v| v.as_str()).unwrap_or("?");
            let _ = writeln!(
                s,
                "{:<5} {:<16} {:>4} {:>8.4}  {:<10} {}",
                i + 1,
                e.id,
                e.efficiency.get(),
                e.conf,
                by,
                e.smiles
            );
        }
        s
    }
}

/// Screens a library with up to `cfg.parallelism` workers. Escalations are
/// posted after all loops finish, in input order, so ticket ids do not
/// depend on thread timing. A candidate that fails to parse or hits a
/// backend error becomes a failed state; the batch carries on.
pub fn screen_library(
    candidates: &[LibraryEntry],
    cfg: &OrchestratorConfig,
    agents: &Agents,
    port: &dyn HumanPort,
) -> Result<ScreeningResult, OrchestratorError> {
    cfg.validate()?;
    let mut seen = HashSet::with_capacity(candidates.len());
    for c in candidates {
        if !seen.insert(c.id.as_str()) {
            return Err(OrchestratorError::DuplicateId(c.id.clone()));
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.parallelism)
        .build()
        .map_err(|e| OrchestratorError::InvalidConfig(format!("worker pool: {e}")))?;
    let mut states: Vec<LoopState> = pool.install(|| {
        candidates
            .par_iter()
            .map(|c| match agents.candidate(&c.id, &c.smiles) {
                Ok(cand) => run_loop(&cand, cfg, agents),
                Err(e) => LoopState::new(&c.id, &c.smiles).failed(format!("input: {e}")),
            })
            .collect()
    });
    for s in states.iter_mut().filter(|s| s.status == LoopStatus::Escalated) {
        escalate(s, port);
    }
    let settings = ScreeningSettings {
        tau: cfg.tau,
        max_loops: cfg.max_loops,
        top_fraction: cfg.top_fraction,
    };
    Ok(ScreeningResult::assemble(settings, states, false))
}
