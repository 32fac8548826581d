//! Single-directory store:
//!
//! ```text
//! <dir>/audit.jsonl      append-only event log (the source of truth)
//! <dir>/tickets.json     snapshot of every ticket, tagged with the last seq
//! <dir>/runs/<id>.json   snapshot of each run
//! ```
//!
//! Every change is appended to the log and synced before the in-memory
//! state and the snapshots are updated, so replaying the log after a crash
//! rebuilds the exact ticket statuses. Snapshots are rewritten on open when
//! they lag the log. All writes go through one mutex, which makes verdict
//! application at-most-once.

use super::audit::{AuditEvent, AuditKind, AuditLog};
use super::{AppError, EscalationTicket, HumanVerdict, TicketStatus};
use crate::orchestrator::{
    Counts, Escalation, HumanPort, LoopState, LoopStatus, ScreeningResult, ScreeningSettings,
};
use chrono::{DateTime, Utc};
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

#[derive(Serialize, Deserialize)]
struct RunStarted {
    run_id: String,
    settings: ScreeningSettings,
    total: usize,
}

#[derive(Serialize, Deserialize)]
struct CandidateDecided {
    run_id: String,
    state: LoopState,
}

#[derive(Serialize, Deserialize)]
struct TicketCreated {
    ticket: EscalationTicket,
}

#[derive(Serialize, Deserialize)]
struct VerdictApplied {
    ticket_id: String,
    verdict: HumanVerdict,
}

#[derive(Serialize, Deserialize)]
struct RunFinalized {
    run_id: String,
    counts: Counts,
    digest: String,
}

#[derive(Debug, Clone)]
struct RunRecord {
    run_id: String,
    settings: ScreeningSettings,
    total: usize,
    started_at: DateTime<Utc>,
    states: Vec<LoopState>,
    result: Option<ScreeningResult>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunPhase {
    Running,
    AwaitingReview,
    Finalized,
}

/// Progress view of one run. `version` is the store's last audit sequence
/// number, so it never decreases between polls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSnapshot {
    pub run_id: String,
    pub phase: RunPhase,
    pub started_at: DateTime<Utc>,
    pub total: usize,
    pub counts: Counts,
    /// Share of candidates with a terminal decision.
    pub completion: f64,
    pub pending_tickets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub digest: Option<String>,
    pub version: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerdictOutcome {
    pub ticket: EscalationTicket,
    pub state: LoopState,
    pub version: u64,
}

#[derive(Serialize, Deserialize)]
struct TicketsSnapshot {
    last_seq: u64,
    tickets: Vec<EscalationTicket>,
}

#[derive(Serialize)]
struct RunFile<'a> {
    run_id: &'a str,
    started_at: DateTime<Utc>,
    last_seq: u64,
    settings: &'a ScreeningSettings,
    total: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: Option<&'a ScreeningResult>,
}

struct Inner {
    log: AuditLog,
    tickets: BTreeMap<String, EscalationTicket>,
    runs: BTreeMap<String, RunRecord>,
}

pub struct Store {
    dir: PathBuf,
    inner: Mutex<Inner>,
}

fn escalated_from_ticket(t: &EscalationTicket) -> LoopState {
    LoopState {
        candidate_id: t.candidate_id.clone(),
        smiles: t.smiles.clone(),
        round: t.transcript.len() as u32,
        transcript: t.transcript.clone(),
        status: LoopStatus::Escalated,
        final_decision: None,
        ticket_id: Some(t.ticket_id.clone()),
        failure: None,
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), AppError> {
    let dir = path.parent().unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

impl Inner {
    fn version(&self) -> u64 {
        self.log.last_seq()
    }

    /// Applies one logged event. Shared by replay and live writes, so both
    /// paths produce the same state.
    fn apply(&mut self, ev: &AuditEvent) -> Result<(), String> {
        let p = ev.payload.clone();
        match ev.kind {
            AuditKind::RunStarted => {
                let r: RunStarted = serde_json::from_value(p).map_err(|e| e.to_string())?;
                if self.runs.contains_key(&r.run_id) {
                    return Err(format!("run {} started twice", r.run_id));
                }
                self.runs.insert(
                    r.run_id.clone(),
                    RunRecord {
                        run_id: r.run_id,
                        settings: r.settings,
                        total: r.total,
                        started_at: ev.timestamp,
                        states: Vec::new(),
                        result: None,
                    },
                );
            }
            AuditKind::CandidateDecided => {
                let c: CandidateDecided = serde_json::from_value(p).map_err(|e| e.to_string())?;
                let mut state = c.state;
                // a verdict may land between ticket creation and this event
                if let Some(v) = state
                    .ticket_id
                    .as_ref()
                    .and_then(|t| self.tickets.get(t))
                    .and_then(|t| t.verdict.clone())
                {
                    if state.status == LoopStatus::Escalated {
                        state.apply_verdict(&v)?;
                    }
                }
                let run = self.runs.get_mut(&c.run_id).ok_or("decision for unknown run")?;
                if run.result.is_some() {
                    return Err(format!("decision for finalized run {}", c.run_id));
                }
                run.states.push(state);
            }
            AuditKind::TicketCreated => {
                let t: TicketCreated = serde_json::from_value(p).map_err(|e| e.to_string())?;
                if self.tickets.contains_key(&t.ticket.ticket_id) {
                    return Err(format!("ticket {} created twice", t.ticket.ticket_id));
                }
                self.tickets.insert(t.ticket.ticket_id.clone(), t.ticket);
            }
            AuditKind::VerdictApplied => {
                let v: VerdictApplied = serde_json::from_value(p).map_err(|e| e.to_string())?;
                let t = self.tickets.get_mut(&v.ticket_id).ok_or("verdict for unknown ticket")?;
                if t.status != TicketStatus::Pending {
                    return Err(format!("second verdict for ticket {}", v.ticket_id));
                }
                t.status = TicketStatus::Resolved;
                t.verdict = Some(v.verdict.clone());
                let (run_id, cand) = (t.run_id.clone(), t.candidate_id.clone());
                if let Some(run) = run_id.and_then(|r| self.runs.get_mut(&r)) {
                    match &mut run.result {
                        Some(res) => {
                            res.apply_verdict(&cand, &v.verdict).map_err(|e| e.to_string())?;
                        }
                        None => {
                            if let Some(s) = run.states.iter_mut().find(|s| s.candidate_id == cand) {
                                s.apply_verdict(&v.verdict)?;
                            }
                        }
                    }
                }
            }
            AuditKind::RunFinalized => {
                let f: RunFinalized = serde_json::from_value(p).map_err(|e| e.to_string())?;
                let run = self.runs.get_mut(&f.run_id).ok_or("finalize for unknown run")?;
                let res = ScreeningResult::from_states(run.settings, std::mem::take(&mut run.states));
                if res.digest() != f.digest {
                    log::debug!("run {}: verdicts arrived before finalization", f.run_id);
                }
                run.result = Some(res);
            }
        }
        Ok(())
    }

    fn commit(&mut self, items: Vec<(AuditKind, serde_json::Value)>) -> Result<(), AppError> {
        let events = self.log.append(items)?;
        for ev in &events {
            // the caller checked preconditions, so a failure here is a bug
            self.apply(ev).map_err(|reason| AppError::CorruptLog {
                line: ev.seq as usize,
                reason,
            })?;
        }
        Ok(())
    }

    fn snapshot(&self, run: &RunRecord) -> RunSnapshot {
        let (counts, pending, completion, digest) = match &run.result {
            Some(r) => (r.counts, r.pending_tickets.clone(), r.completion(), Some(r.digest())),
            None => {
                let partial = ScreeningResult::from_states(run.settings, run.states.clone());
                let decided = run.states.len() - partial.counts.escalated;
                let completion = if run.total == 0 {
                    0.0
                } else {
                    decided as f64 / run.total as f64
                };
                (partial.counts, partial.pending_tickets, completion, None)
            }
        };
        let phase = match &run.result {
            None => RunPhase::Running,
            Some(r) if !r.pending_tickets.is_empty() => RunPhase::AwaitingReview,
            Some(_) => RunPhase::Finalized,
        };
        RunSnapshot {
            run_id: run.run_id.clone(),
            phase,
            started_at: run.started_at,
            total: run.total,
            counts,
            completion,
            pending_tickets: pending,
            digest,
            version: self.version(),
        }
    }
}

impl Store {
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, AppError> {
        let dir = dir.as_ref().to_path_buf();
        std::fs::create_dir_all(dir.join("runs"))?;
        let (log, events) = AuditLog::open(dir.join("audit.jsonl"))?;
        let mut inner = Inner {
            log,
            tickets: BTreeMap::new(),
            runs: BTreeMap::new(),
        };
        for ev in &events {
            inner.apply(ev).map_err(|reason| AppError::CorruptLog {
                line: ev.seq as usize,
                reason,
            })?;
        }
        let store = Self {
            dir,
            inner: Mutex::new(inner),
        };
        let stale = store.snapshot_seq().is_none_or(|s| s != store.version());
        if stale {
            let inner = store.inner.lock();
            store.write_tickets(&inner)?;
            for run in inner.runs.values() {
                store.write_run(&inner, run)?;
            }
        }
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn audit_path(&self) -> PathBuf {
        self.dir.join("audit.jsonl")
    }

    fn snapshot_seq(&self) -> Option<u64> {
        let bytes = std::fs::read(self.dir.join("tickets.json")).ok()?;
        serde_json::from_slice::<TicketsSnapshot>(&bytes).ok().map(|s| s.last_seq)
    }

    fn write_tickets(&self, inner: &Inner) -> Result<(), AppError> {
        let snap = TicketsSnapshot {
            last_seq: inner.version(),
            tickets: inner.tickets.values().cloned().collect(),
        };
        write_atomic(&self.dir.join("tickets.json"), &serde_json::to_vec_pretty(&snap)?)
    }

    fn write_run(&self, inner: &Inner, run: &RunRecord) -> Result<(), AppError> {
        let file = RunFile {
            run_id: &run.run_id,
            started_at: run.started_at,
            last_seq: inner.version(),
            settings: &run.settings,
            total: run.total,
            result: run.result.as_ref(),
        };
        write_atomic(
            &self.dir.join("runs").join(format!("{}.json", run.run_id)),
            &serde_json::to_vec_pretty(&file)?,
        )
    }

    /// Last audit sequence number; rises with every change.
    pub fn version(&self) -> u64 {
        self.inner.lock().version()
    }

    pub fn begin_run(&self, settings: ScreeningSettings, total: usize) -> Result<String, AppError> {
        let mut inner = self.inner.lock();
        let run_id = format!("R{:04}", inner.runs.len() + 1);
        let payload = serde_json::to_value(RunStarted {
            run_id: run_id.clone(),
            settings,
            total,
        })?;
        inner.commit(vec![(AuditKind::RunStarted, payload)])?;
        let run = inner.runs[&run_id].clone();
        self.write_run(&inner, &run)?;
        Ok(run_id)
    }

    /// Records every terminal state of a finished screening and closes the
    /// run.
    pub fn finish_run(&self, run_id: &str, result: &ScreeningResult) -> Result<RunSnapshot, AppError> {
        let mut inner = self.inner.lock();
        match inner.runs.get(run_id) {
            None => return Err(AppError::UnknownRun(run_id.into())),
            Some(r) if r.result.is_some() || !r.states.is_empty() => return Err(AppError::RunExists(run_id.into())),
            Some(_) => {}
        }
        let mut items = Vec::with_capacity(result.states.len() + 1);
        for s in &result.states {
            items.push((
                AuditKind::CandidateDecided,
                serde_json::to_value(CandidateDecided {
                    run_id: run_id.to_string(),
                    state: s.clone(),
                })?,
            ));
        }
        items.push((
            AuditKind::RunFinalized,
            serde_json::to_value(RunFinalized {
                run_id: run_id.to_string(),
                counts: result.counts,
                digest: result.digest(),
            })?,
        ));
        inner.commit(items)?;
        let run = inner.runs[run_id].clone();
        self.write_run(&inner, &run)?;
        Ok(inner.snapshot(&run))
    }

    pub fn create_ticket(&self, run_id: Option<&str>, esc: &Escalation) -> Result<EscalationTicket, AppError> {
        let mut inner = self.inner.lock();
        if let Some(r) = run_id {
            if !inner.runs.contains_key(r) {
                return Err(AppError::UnknownRun(r.into()));
            }
        }
        let ticket = EscalationTicket {
            ticket_id: format!("T{:06}", inner.tickets.len() + 1),
            run_id: run_id.map(str::to_string),
            candidate_id: esc.candidate_id.clone(),
            smiles: esc.smiles.clone(),
            transcript: esc.transcript.clone(),
            created_at: Utc::now(),
            status: TicketStatus::Pending,
            verdict: None,
        };
        let payload = serde_json::to_value(TicketCreated { ticket: ticket.clone() })?;
        inner.commit(vec![(AuditKind::TicketCreated, payload)])?;
        self.write_tickets(&inner)?;
        Ok(ticket)
    }

    /// Resolves a pending ticket. A second verdict for the same ticket is a
    /// conflict that reports the verdict already applied.
    pub fn submit_verdict(&self, ticket_id: &str, mut verdict: HumanVerdict) -> Result<VerdictOutcome, AppError> {
        verdict.validate().map_err(AppError::InvalidVerdict)?;
        let mut inner = self.inner.lock();
        let ticket = inner
            .tickets
            .get(ticket_id)
            .ok_or_else(|| AppError::UnknownTicket(ticket_id.into()))?;
        if let Some(existing) = &ticket.verdict {
            return Err(AppError::Conflict {
                ticket_id: ticket_id.into(),
                existing: Box::new(existing.clone()),
            });
        }
        verdict.submitted_at.get_or_insert_with(Utc::now);

        // dry run on a copy so a rejected verdict leaves no trace in the log
        let mut probe = escalated_from_ticket(ticket);
        probe.apply_verdict(&verdict).map_err(AppError::InvalidVerdict)?;

        let payload = serde_json::to_value(VerdictApplied {
            ticket_id: ticket_id.into(),
            verdict,
        })?;
        inner.commit(vec![(AuditKind::VerdictApplied, payload)])?;

        let ticket = inner.tickets[ticket_id].clone();
        let run = ticket.run_id.as_ref().and_then(|r| inner.runs.get(r)).cloned();
        let state = run
            .as_ref()
            .and_then(|r| {
                r.result
                    .as_ref()
                    .and_then(|res| res.state(&ticket.candidate_id).cloned())
                    .or_else(|| r.states.iter().find(|s| s.candidate_id == ticket.candidate_id).cloned())
            })
            .unwrap_or(probe);
        self.write_tickets(&inner)?;
        if let Some(run) = &run {
            self.write_run(&inner, run)?;
        }
        Ok(VerdictOutcome {
            ticket,
            state,
            version: inner.version(),
        })
    }

    /// Tickets in creation order, optionally filtered by status.
    pub fn list_escalations(&self, status: Option<TicketStatus>) -> Vec<EscalationTicket> {
        let inner = self.inner.lock();
        let mut out: Vec<EscalationTicket> = inner
            .tickets
            .values()
            .filter(|t| status.is_none_or(|s| t.status == s))
            .cloned()
            .collect();
        out.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.ticket_id.cmp(&b.ticket_id)));
        out
    }

    pub fn ticket(&self, ticket_id: &str) -> Result<EscalationTicket, AppError> {
        self.inner
            .lock()
            .tickets
            .get(ticket_id)
            .cloned()
            .ok_or_else(|| AppError::UnknownTicket(ticket_id.into()))
    }

    pub fn runs(&self) -> Vec<RunSnapshot> {
        let inner = self.inner.lock();
        inner.runs.values().map(|r| inner.snapshot(r)).collect()
    }

    pub fn run(&self, run_id: &str) -> Result<RunSnapshot, AppError> {
        let inner = self.inner.lock();
        let run = inner.runs.get(run_id).ok_or_else(|| AppError::UnknownRun(run_id.into()))?;
        Ok(inner.snapshot(run))
    }

    pub fn report(&self, run_id: &str) -> Result<ScreeningResult, AppError> {
        let inner = self.inner.lock();
        let run = inner.runs.get(run_id).ok_or_else(|| AppError::UnknownRun(run_id.into()))?;
        run.result.clone().ok_or_else(|| AppError::RunNotFinished(run_id.into()))
    }

    /// Escalation sink that files tickets in this store.
    pub fn port<'a>(&'a self, run_id: Option<&str>) -> StorePort<'a> {
        StorePort {
            store: self,
            run_id: run_id.map(str::to_string),
        }
    }
}

pub struct StorePort<'a> {
    store: &'a Store,
    run_id: Option<String>,
}

impl HumanPort for StorePort<'_> {
    fn post(&self, escalation: &Escalation) -> Result<String, String> {
        self.store
            .create_ticket(self.run_id.as_deref(), escalation)
            .map(|t| t.ticket_id)
            .map_err(|e| e.to_string())
    }
}
