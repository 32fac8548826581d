//! Review-side state: escalation tickets, human verdicts, the audit log and
//! the on-disk store that the CLI and the HTTP service share.

mod audit;
mod store;

pub use audit::{AuditEvent, AuditKind, AuditLog};
pub use store::{RunPhase, RunSnapshot, Store, StorePort, VerdictOutcome};

use crate::orchestrator::RoundRecord;
use crate::score::EfficiencyScore;
use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AppError {
    #[error("unknown ticket {0:?}")]
    UnknownTicket(String),
    #[error("ticket {ticket_id:?} is already resolved")]
    Conflict {
        ticket_id: String,
        existing: Box<HumanVerdict>,
    },
    #[error("invalid verdict: {0}")]
    InvalidVerdict(String),
    #[error("unknown run {0:?}")]
    UnknownRun(String),
    #[error("run {0:?} has not finished")]
    RunNotFinished(String),
    #[error("run {0:?} already exists")]
    RunExists(String),
    #[error("audit log line {line}: {reason}")]
    CorruptLog { line: usize, reason: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Orchestrator(#[from] crate::orchestrator::OrchestratorError),
}

/// A reviewer's final call on an escalated candidate.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HumanVerdict {
    pub toxic: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency: Option<EfficiencyScore>,
    pub reviewer: String,
    #[serde(default)]
    pub note: String,
    /// Filled in by the store when the client leaves it out.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub submitted_at: Option<DateTime<Utc>>,
}

impl HumanVerdict {
    pub fn non_toxic(efficiency: u8, reviewer: &str) -> Self {
        Self {
            toxic: false,
            efficiency: EfficiencyScore::new(efficiency),
            reviewer: reviewer.to_string(),
            note: String::new(),
            submitted_at: None,
        }
    }

    pub fn toxic(reviewer: &str) -> Self {
        Self {
            toxic: true,
            efficiency: None,
            reviewer: reviewer.to_string(),
            note: String::new(),
            submitted_at: None,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        match (self.toxic, self.efficiency) {
            (true, Some(_)) => return Err("efficiency must be absent when toxic is true".into()),
            (false, None) => return Err("efficiency (1-10) is required when toxic is false".into()),
            _ => {}
        }
        if self.reviewer.trim().is_empty() {
            return Err("reviewer must not be empty".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TicketStatus {
    Pending,
    Resolved,
}

impl std::str::FromStr for TicketStatus {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "pending" => Ok(TicketStatus::Pending),
            "resolved" => Ok(TicketStatus::Resolved),
            other => Err(format!("unknown ticket status {other:?} (expected pending or resolved)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EscalationTicket {
    pub ticket_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
    pub candidate_id: String,
    pub smiles: String,
    pub transcript: Vec<RoundRecord>,
    pub created_at: DateTime<Utc>,
    pub status: TicketStatus,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verdict: Option<HumanVerdict>,
}
