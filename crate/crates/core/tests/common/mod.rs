//! Oracles and experiment drivers shared by the integration tests and the
//! acceptance harness.
#![allow(dead_code)]

use lipogate::agents::{Agents, PredictScript, ScriptedBackend, ScriptedFixture, VerifierVerdict};
use lipogate::app::HumanVerdict;
use lipogate::chem::{self, FingerprintParams};
use lipogate::dataset::{self, synth, LibraryEntry, LipidRecord};
use lipogate::evalkit::{compute_metrics, EvalPair, MetricsReport};
use lipogate::numerics::{loss_gradients, total_loss, Logits, NUM_CLASSES};
use lipogate::orchestrator::{
    evaluate_candidate, screen_library, Adjudication, LoopStatus, OrchestratorConfig, QueuePort,
};
use lipogate::surrogate::{evaluate, train, MlpParams, TrainConfig};
use lipogate::EfficiencyScore;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

pub fn fixture_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

// ---------------------------------------------------------------- gradients

pub struct Batch {
    pub logits: Logits,
    pub tox: Vec<bool>,
    pub eff: Vec<Option<EfficiencyScore>>,
}

pub fn random_batch(rng: &mut ChaCha8Rng, max_n: usize) -> Batch {
    let n = rng.random_range(1..=max_n);
    let tox: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
    let eff = tox
        .iter()
        .map(|&t| (!t).then(|| EfficiencyScore::new(rng.random_range(1..=10)).unwrap()))
        .collect();
    let z_tox = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
    let z_eff = (0..n)
        .map(|_| std::array::from_fn(|_| rng.random_range(-4.0..4.0)))
        .collect();
    Batch {
        logits: Logits::new(z_tox, z_eff).unwrap(),
        tox,
        eff,
    }
}

/// Central differences of the total loss against the analytic gradient.
/// Entries where both are exactly zero are skipped; elsewhere the error is
/// `|a - n| / max(|a|, |n|)`.
pub fn max_fd_error(b: &Batch, alpha: f64, eps: f64, h: f64) -> f64 {
    let g = loss_gradients(&b.logits, &b.tox, &b.eff, alpha, eps).unwrap();
    let loss = |l: &Logits| total_loss(l, &b.tox, &b.eff, alpha, eps).unwrap().l_total;
    let rel = |a: f64, n: f64| {
        if a == 0.0 && n == 0.0 {
            0.0
        } else {
            (a - n).abs() / a.abs().max(n.abs())
        }
    };
    let mut worst: f64 = 0.0;
    for i in 0..b.logits.len() {
        let (mut up, mut down) = (b.logits.clone(), b.logits.clone());
        up.tox[i] += h;
        down.tox[i] -= h;
        worst = worst.max(rel(g.tox[i], (loss(&up) - loss(&down)) / (2.0 * h)));
        for k in 0..NUM_CLASSES {
            let (mut up, mut down) = (b.logits.clone(), b.logits.clone());
            up.eff[i][k] += h;
            down.eff[i][k] -= h;
            worst = worst.max(rel(g.eff[i][k], (loss(&up) - loss(&down)) / (2.0 * h)));
        }
    }
    worst
}

/// Rewrites every toxic sample's efficiency logits and reports whether the
/// efficiency loss and every gradient stayed bit-identical.
pub fn masking_trial(rng: &mut ChaCha8Rng) -> bool {
    let mut b = random_batch(rng, 8);
    if !b.tox.iter().any(|&t| t) {
        let i = rng.random_range(0..b.tox.len());
        b.tox[i] = true;
        b.eff[i] = None;
    }
    let alpha = rng.random_range(0.0..1.0);
    let before_loss = total_loss(&b.logits, &b.tox, &b.eff, alpha, 1e-8).unwrap();
    let before = loss_gradients(&b.logits, &b.tox, &b.eff, alpha, 1e-8).unwrap();
    let mut l = b.logits.clone();
    for i in (0..l.len()).filter(|&i| b.tox[i]) {
        for z in l.eff[i].iter_mut() {
            *z = match rng.random_range(0..4) {
                0 => rng.random_range(-1e6..1e6),
                1 => 0.0,
                2 => -*z,
                _ => rng.random_range(-50.0..50.0),
            };
        }
    }
    let after_loss = total_loss(&l, &b.tox, &b.eff, alpha, 1e-8).unwrap();
    let after = loss_gradients(&l, &b.tox, &b.eff, alpha, 1e-8).unwrap();
    after_loss.l_eff.to_bits() == before_loss.l_eff.to_bits()
        && after_loss.l_tox.to_bits() == before_loss.l_tox.to_bits()
        && after.tox.iter().zip(&before.tox).all(|(a, b)| a.to_bits() == b.to_bits())
        && after
            .eff
            .iter()
            .flatten()
            .zip(before.eff.iter().flatten())
            .all(|(a, b)| a.to_bits() == b.to_bits())
}

// ---------------------------------------------------------------- metrics

/// Definition-by-definition recomputation: each metric filters its own
/// subset from scratch.
pub fn brute_force_metrics(pairs: &[EvalPair]) -> [(Option<f64>, usize); 5] {
    let ratio = |sel: Vec<bool>| {
        let n = sel.len();
        ((n > 0).then(|| sel.iter().filter(|&&h| h).count() as f64 / n as f64), n)
    };
    let clean: Vec<&EvalPair> = pairs.iter().filter(|p| !p.true_tox).collect();
    let eff = ratio(clean.iter().map(|p| p.pred_eff.is_some() && p.pred_eff == p.true_eff).collect());
    let scored: Vec<&&EvalPair> = clean.iter().filter(|p| p.pred_eff.is_some()).collect();
    let extreme = ratio(
        scored
            .iter()
            .filter(|p| [1, 2, 9, 10].contains(&p.true_eff.unwrap().get()))
            .map(|p| p.pred_eff == p.true_eff)
            .collect(),
    );
    let middle = ratio(
        scored
            .iter()
            .filter(|p| (3..=8).contains(&p.true_eff.unwrap().get()))
            .map(|p| p.pred_eff == p.true_eff)
            .collect(),
    );
    let tox = ratio(pairs.iter().map(|p| p.pred_tox == p.true_tox).collect());
    let mae = if scored.is_empty() {
        (None, 0)
    } else {
        let s: f64 = scored
            .iter()
            .map(|p| (p.pred_eff.unwrap().get() as f64 - p.true_eff.unwrap().get() as f64).abs())
            .sum();
        (Some(s / scored.len() as f64), scored.len())
    };
    [eff, extreme, middle, tox, mae]
}

pub fn random_pairs(rng: &mut ChaCha8Rng) -> Vec<EvalPair> {
    let n = rng.random_range(1..=40);
    (0..n)
        .map(|i| {
            let true_tox = rng.random_bool(0.3);
            let pred_tox = rng.random_bool(0.3);
            let score = |rng: &mut ChaCha8Rng| EfficiencyScore::new(rng.random_range(1..=10));
            EvalPair {
                id: format!("p{i}"),
                true_tox,
                pred_tox,
                true_eff: if true_tox { None } else { score(rng) },
                pred_eff: if pred_tox { None } else { score(rng) },
            }
        })
        .collect()
}

pub fn as_tuples(m: &MetricsReport) -> [(Option<f64>, usize); 5] {
    [
        (m.efficiency_accuracy.value, m.efficiency_accuracy.n),
        (m.extreme_accuracy.value, m.extreme_accuracy.n),
        (m.middle_accuracy.value, m.middle_accuracy.n),
        (m.toxic_accuracy.value, m.toxic_accuracy.n),
        (m.mae.value, m.mae.n),
    ]
}

/// Compares within 1e-12 (the oracle sums in a different order).
pub fn metrics_agree(pairs: &[EvalPair]) -> bool {
    let got = as_tuples(&compute_metrics(pairs).unwrap());
    let want = brute_force_metrics(pairs);
    got.iter().zip(&want).all(|(g, w)| {
        g.1 == w.1
            && match (g.0, w.0) {
                (Some(a), Some(b)) => (a - b).abs() <= 1e-12,
                (None, None) => true,
                _ => false,
            }
    })
}

// ---------------------------------------------------------------- loop sweep

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Branch {
    pub toxic: bool,
    pub confident: bool,
    pub verifier_ok: bool,
}

pub const SWEEP_TAU: f64 = 0.7;

pub fn all_branches() -> Vec<Branch> {
    let mut v = Vec::new();
    for toxic in [true, false] {
        for confident in [true, false] {
            for verifier_ok in [true, false] {
                v.push(Branch {
                    toxic,
                    confident,
                    verifier_ok,
                });
            }
        }
    }
    v
}

pub struct SweepSummary {
    pub paths: usize,
    pub escalated: usize,
    pub violations: Vec<String>,
}

/// Runs every branch sequence of length `max_loops` and checks the
/// terminal state against a direct reading of the loop rules.
pub fn safety_sweep(max_loops: u32) -> SweepSummary {
    let branches = all_branches();
    let mut paths: Vec<Vec<Branch>> = vec![vec![]];
    for _ in 0..max_loops {
        paths = paths
            .into_iter()
            .flat_map(|p| {
                branches.iter().map(move |b| {
                    let mut q = p.clone();
                    q.push(*b);
                    q
                })
            })
            .collect();
    }
    let cfg = OrchestratorConfig {
        tau: SWEEP_TAU,
        max_loops,
        ..Default::default()
    };
    let mut out = SweepSummary {
        paths: paths.len(),
        escalated: 0,
        violations: Vec::new(),
    };
    for (pi, path) in paths.iter().enumerate() {
        let id = format!("P{pi}");
        let mut f = ScriptedFixture::new();
        for (r, b) in path.iter().enumerate() {
            let round = r as u32 + 1;
            // the boundary value sits at tau, which must not count as confident
            let conf = if b.confident { 0.93 } else { SWEEP_TAU };
            let script = if b.toxic {
                PredictScript::unsafe_(conf)
            } else {
                PredictScript::safe((pi % 10) as u8 + 1, conf)
            };
            f.push_predict(&id, round, script);
            let v = if b.verifier_ok {
                VerifierVerdict::consistent(vec![])
            } else {
                VerifierVerdict::inconsistent(format!("round {round} inconsistent"), vec![])
            };
            f.push_verify(&id, round, v);
        }
        let backend = Arc::new(ScriptedBackend::new(f));
        let agents = Agents::new(backend.clone(), backend.clone(), FingerprintParams::default());
        let cand = agents.candidate(&id, "CCO").unwrap();
        let port = QueuePort::new();
        let s = evaluate_candidate(&cand, &cfg, &agents, &port);

        // expected outcome, read straight off the rules
        let mut expect = (LoopStatus::Escalated, max_loops as usize);
        for (r, b) in path.iter().enumerate() {
            if b.toxic {
                expect = (LoopStatus::RejectedToxic, r + 1);
                break;
            }
            if b.confident || b.verifier_ok {
                expect = (LoopStatus::Accepted, r + 1);
                break;
            }
        }
        let mut bad = |m: String| out.violations.push(format!("{id} {path:?}: {m}"));
        if (s.status, s.transcript.len()) != expect {
            bad(format!("got {:?} after {} rounds, expected {expect:?}", s.status, s.transcript.len()));
        }
        if let Err(e) = s.check_invariants(max_loops) {
            bad(e);
        }
        if let Some(f) = s.final_decision {
            if f.is_toxic() && f.efficiency().is_some() {
                bad("toxic final carries efficiency".into());
            }
        }
        let json = serde_json::to_value(&s).unwrap();
        if json["final"]["toxic"] == true && json["final"].get("efficiency").is_some() {
            bad("serialized toxic final carries efficiency".into());
        }
        for rec in &s.transcript {
            if rec.output.y_tox() && rec.output.y_eff().is_some() {
                bad("toxic round carries efficiency".into());
            }
        }
        let all_failed = path.iter().all(|b| !b.toxic && !b.confident && !b.verifier_ok);
        let escalated = s.status == LoopStatus::Escalated;
        if escalated != all_failed || port.len() != usize::from(all_failed) {
            bad(format!("escalated={escalated}, tickets={}, all rounds failed={all_failed}", port.len()));
        }
        out.escalated += escalated as usize;
    }
    out
}

// ---------------------------------------------------------------- experiments

/// Default synthetic dataset, rescaled, with the fixed 800/800 split.
pub fn standard_split() -> (Vec<LipidRecord>, Vec<LipidRecord>) {
    let mut recs = synth::generate(&synth::SynthConfig::default());
    dataset::rescale_scores(&mut recs).unwrap();
    let s = dataset::split(&recs, 7, 800).unwrap();
    let (tr, ev) = s.materialize(&recs);
    (tr.into_iter().cloned().collect(), ev.into_iter().cloned().collect())
}

/// Validation carved out of the training half (640/160), never the eval half.
pub fn carve_validation(train: &[LipidRecord]) -> (Vec<LipidRecord>, Vec<LipidRecord>) {
    let s = dataset::split(train, 8, 640).unwrap();
    let (t, v) = s.materialize(train);
    (t.into_iter().cloned().collect(), v.into_iter().cloned().collect())
}

pub struct AlphaRun {
    pub alpha: f64,
    pub eval: MetricsReport,
    pub params: MlpParams,
    pub best_epoch: usize,
}

pub fn alpha_run(alpha: f64) -> AlphaRun {
    let (train_all, eval_half) = standard_split();
    let (tr, val) = carve_validation(&train_all);
    let cfg = TrainConfig {
        lr: 0.1,
        alpha,
        epochs: 100,
        ..Default::default()
    };
    let out = train(&tr, &val, &cfg).unwrap();
    let eval = evaluate(&out.best.params, &eval_half, &cfg.fingerprint).unwrap();
    AlphaRun {
        alpha,
        eval,
        params: out.best.params,
        best_epoch: out.best.epoch,
    }
}

pub struct HitlOutcome {
    pub with_human: MetricsReport,
    pub no_human: MetricsReport,
    pub escalated: usize,
    /// Toxic accuracy over the escalated candidates, with the oracle human.
    pub escalated_toxic_accuracy: f64,
}

/// Scripted agents built from synthetic truth: most candidates are called
/// right with high confidence, some need the verifier, some are called
/// wrong with high confidence, and the rest are wrong, unconfident and
/// rejected by the verifier three times, so they escalate. An oracle human
/// answers every ticket with the truth.
pub fn hitl_experiment(seed: u64) -> HitlOutcome {
    let (_, eval_half) = standard_split();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut f = ScriptedFixture::new();
    let mut truth = BTreeMap::new();
    let mut library = Vec::new();
    let wrong_eff = |rng: &mut ChaCha8Rng, e: Option<EfficiencyScore>| {
        let t = e.map_or(5, |e| e.get() as i32);
        let d = rng.random_range(1..=3) * if rng.random_bool(0.5) { 1 } else { -1 };
        PredictScript::safe((t + d).clamp(1, 10) as u8, rng.random_range(0.2..0.6))
    };
    for r in &eval_half {
        truth.insert(r.id.clone(), (r.toxic, r.efficiency_score));
        library.push(LibraryEntry {
            id: r.id.clone(),
            smiles: r.smiles.clone(),
        });
        let right = |conf: f64| match r.efficiency_score {
            _ if r.toxic => PredictScript::unsafe_(conf),
            Some(e) => PredictScript::safe(e.get(), conf),
            None => unreachable!("finalized records are scored"),
        };
        let roll: f64 = rng.random();
        if roll < 0.55 {
            f.push_predict(&r.id, 1, right(0.9));
        } else if roll < 0.70 {
            f.push_predict(&r.id, 1, right(0.5));
            f.push_verify(&r.id, 1, VerifierVerdict::consistent(vec![]));
        } else if roll < 0.78 {
            // confidently wrong; the loop cannot catch these
            let s = if r.toxic {
                PredictScript::safe(rng.random_range(1..=10), 0.9)
            } else {
                PredictScript {
                    conf: 0.9,
                    ..wrong_eff(&mut rng, r.efficiency_score)
                }
            };
            f.push_predict(&r.id, 1, s);
        } else {
            for round in 1..=3 {
                f.push_predict(&r.id, round, wrong_eff(&mut rng, r.efficiency_score));
                f.push_verify(
                    &r.id,
                    round,
                    VerifierVerdict::inconsistent(format!("round {round}: score not supported"), vec![]),
                );
            }
        }
    }
    let backend = Arc::new(ScriptedBackend::new(f));
    let agents = Agents::new(backend.clone(), backend, FingerprintParams::default());
    let port = QueuePort::new();
    let cfg = OrchestratorConfig::default();
    let mut result = screen_library(&library, &cfg, &agents, &port).unwrap();
    let escalated_ids: Vec<String> = port.tickets().into_iter().map(|(_, e)| e.candidate_id).collect();
    for id in &escalated_ids {
        let (tox, eff) = truth[id];
        let v = if tox {
            HumanVerdict::toxic("oracle")
        } else {
            HumanVerdict::non_toxic(eff.unwrap().get(), "oracle")
        };
        result.apply_verdict(id, &v).unwrap();
    }
    let with = result.eval_pairs(&truth, Adjudication::WithHuman);
    let without = result.eval_pairs(&truth, Adjudication::NoHuman);
    let esc_pairs: Vec<EvalPair> = with.iter().filter(|p| escalated_ids.contains(&p.id)).cloned().collect();
    let esc_tox = if esc_pairs.is_empty() {
        0.0
    } else {
        compute_metrics(&esc_pairs).unwrap().toxic_accuracy.or_zero()
    };
    HitlOutcome {
        with_human: compute_metrics(&with).unwrap(),
        no_human: compute_metrics(&without).unwrap(),
        escalated: escalated_ids.len(),
        escalated_toxic_accuracy: esc_tox,
    }
}

// ---------------------------------------------------------------- parser suite

pub fn corpus() -> Vec<String> {
    std::fs::read_to_string(fixture_path("smiles_corpus.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(str::to_string)
        .collect()
}

pub fn rewrite_pairs() -> Vec<(String, String)> {
    std::fs::read_to_string(fixture_path("rewrite_pairs.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let (a, b) = l.split_once('\t').expect("tab-separated pair");
            (a.to_string(), b.to_string())
        })
        .collect()
}

pub struct Malformed {
    pub smiles: String,
    pub variant: String,
    pub position: usize,
}

pub fn malformed() -> Vec<Malformed> {
    std::fs::read_to_string(fixture_path("malformed_smiles.tsv"))
        .unwrap()
        .lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            Malformed {
                smiles: cols[0].to_string(),
                variant: cols[1].to_string(),
                position: cols[2].parse().unwrap(),
            }
        })
        .collect()
}

/// Tokens concatenate back to the input, the graph is consistent, and the
/// reconstructed text parses to the same graph.
pub fn round_trips(smiles: &str) -> Result<(), String> {
    let tokens = chem::tokenize(smiles).map_err(|e| e.to_string())?;
    let text = chem::reconstruct(&tokens);
    if text != smiles {
        return Err(format!("reconstructed {text:?}"));
    }
    let g = chem::parse(&tokens).map_err(|e| e.to_string())?;
    g.check_invariants()?;
    if chem::parse_smiles(&text).map_err(|e| e.to_string())? != g {
        return Err("reparse differs".into());
    }
    Ok(())
}

pub fn same_fingerprint(a: &str, b: &str) -> Result<bool, String> {
    let p = FingerprintParams::default();
    let fa = chem::featurize(a, &p).map_err(|e| format!("{a}: {e}"))?;
    let fb = chem::featurize(b, &p).map_err(|e| format!("{b}: {e}"))?;
    Ok(fa == fb)
}

/// Error variant name and position for a malformed input.
pub fn positioned_error(smiles: &str) -> Option<(String, Option<usize>)> {
    let e = chem::parse_smiles(smiles).err()?;
    let name = format!("{e:?}");
    let name = name.split([' ', '{', '(']).next().unwrap().to_string();
    Some((name, e.position()))
}
