mod common;

use common::*;
use lipogate::agents::{Agents, PredictScript, ScriptedBackend, ScriptedFixture, VerifierVerdict};
use lipogate::chem::FingerprintParams;
use lipogate::orchestrator::{evaluate_candidate, LoopStatus, OrchestratorConfig, QueuePort};
use std::sync::Arc;

#[test]
fn every_three_round_path_is_safe() {
    let s = safety_sweep(3);
    assert_eq!(s.paths, 512);
    assert!(s.violations.is_empty(), "{:#?}", &s.violations[..s.violations.len().min(10)]);
    // escalation needs every round to be non-toxic, unconfident and rejected
    assert_eq!(s.escalated, 1);
}

#[test]
fn shorter_budgets_are_safe_too() {
    for max_loops in 1..=2 {
        let s = safety_sweep(max_loops);
        assert_eq!(s.paths, 8usize.pow(max_loops));
        assert!(s.violations.is_empty(), "{:?}", s.violations);
    }
}

#[test]
fn disagreement_stops_at_the_loop_budget() {
    let mut f = ScriptedFixture::new();
    for round in 1..=5 {
        f.push_predict("X", round, PredictScript::safe(6, 0.4));
        f.push_verify("X", round, VerifierVerdict::inconsistent("no", vec![]));
    }
    let backend = Arc::new(ScriptedBackend::new(f));
    let agents = Agents::new(backend.clone(), backend.clone(), FingerprintParams::default());
    let port = QueuePort::new();
    let cand = agents.candidate("X", "CCO").unwrap();
    let s = evaluate_candidate(&cand, &OrchestratorConfig::default(), &agents, &port);
    assert_eq!(s.status, LoopStatus::Escalated);
    assert_eq!((backend.predict_calls(), backend.verify_calls()), (3, 3));
    assert_eq!(port.len(), 1);
    assert_eq!(s.ticket_id.as_deref(), Some("Q1"));
    assert_eq!(s.final_decision, None);
}
