//! Terminal review: the same verdict path as the HTTP service, for when no
//! console is available.

use anyhow::Result;
use lipogate::agents::Decision;
use lipogate::app::{AppError, EscalationTicket, HumanVerdict, Store, TicketStatus};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

pub fn format_ticket(t: &EscalationTicket) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "ticket {}  candidate {}  ({:?})", t.ticket_id, t.candidate_id, t.status);
    if let Some(run) = &t.run_id {
        let _ = writeln!(s, "run     {run}");
    }
    let _ = writeln!(s, "smiles  {}", t.smiles);
    let _ = writeln!(s, "created {}", t.created_at.to_rfc3339());
    for rec in &t.transcript {
        let o = &rec.output;
        let call = match &o.decision {
            Decision::Safe { efficiency, .. } => format!("non-toxic, efficiency {}", efficiency.get()),
            Decision::Unsafe => "toxic".to_string(),
        };
        let _ = writeln!(s, "  round {}: {call}, conf {:.4}", o.round, o.conf);
        for line in o.r_pred.lines() {
            let _ = writeln!(s, "    | {line}");
        }
        match &rec.verdict {
            Some(v) => match v.r_corr() {
                Some(fb) => {
                    let _ = writeln!(s, "    verifier: 0, {fb}");
                }
                None => {
                    let _ = writeln!(s, "    verifier: 1");
                }
            },
            None => {
                let _ = writeln!(s, "    verifier: not called");
            }
        }
    }
    if let Some(v) = &t.verdict {
        let call = match v.efficiency {
            Some(e) => format!("non-toxic, efficiency {}", e.get()),
            None => "toxic".into(),
        };
        let _ = writeln!(s, "verdict: {call} by {}", v.reviewer);
    }
    s
}

fn prompt(input: &mut impl BufRead, out: &mut impl Write, text: &str) -> Result<Option<String>> {
    write!(out, "{text}")?;
    out.flush()?;
    let mut line = String::new();
    if input.read_line(&mut line)? == 0 {
        return Ok(None);
    }
    Ok(Some(line.trim().to_string()))
}

/// Walks the pending tickets in creation order. Answers: `t` for toxic,
/// 1-10 for a non-toxic efficiency, `s` to skip, `q` (or end of input) to
/// stop. Returns the number of verdicts applied.
pub fn review_pending(store: &Store, reviewer: &str, input: &mut impl BufRead, out: &mut impl Write) -> Result<usize> {
    let pending = store.list_escalations(Some(TicketStatus::Pending));
    if pending.is_empty() {
        writeln!(out, "no pending tickets")?;
        return Ok(0);
    }
    let mut applied = 0;
    'tickets: for t in pending {
        writeln!(out, "\n{}", format_ticket(&t))?;
        let verdict = loop {
            let Some(answer) = prompt(input, out, "verdict [t = toxic, 1-10 = efficiency, s = skip, q = quit]: ")? else {
                break 'tickets;
            };
            match answer.as_str() {
                "q" => break 'tickets,
                "s" => continue 'tickets,
                "t" => break HumanVerdict::toxic(reviewer),
                n => match n.parse::<u8>() {
                    Ok(e) if (1..=10).contains(&e) => break HumanVerdict::non_toxic(e, reviewer),
                    _ => writeln!(out, "expected t, 1-10, s or q")?,
                },
            }
        };
        let note = prompt(input, out, "note (optional): ")?.unwrap_or_default();
        let verdict = HumanVerdict { note, ..verdict };
        match store.submit_verdict(&t.ticket_id, verdict) {
            Ok(o) => {
                applied += 1;
                writeln!(out, "{}: {:?}", t.ticket_id, o.state.status)?;
            }
            Err(AppError::Conflict { existing, .. }) => {
                writeln!(out, "{} was resolved meanwhile by {}", t.ticket_id, existing.reviewer)?;
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(applied)
}
