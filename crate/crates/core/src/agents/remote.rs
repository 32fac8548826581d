//! Remote LLM agents over a JSON-lines TCP protocol.
//!
//! The client sends one request line and reads one reply line per call:
//!
//! ```text
//! -> {"protocol":"lipogate-agent/1","agent":"predictor","auth":"...","messages":[{"role":"system","content":"..."},{"role":"user","content":"..."}]}
//! <- {"content":"...```result\nverdict: non-toxic\nscore: 7\nconfidence: 0.8\nreasoning: ...\n```"}
//! <- {"error":"model overloaded"}
//! ```
//!
//! Replies are parsed strictly. A missing or extra field is an error
//! carrying the raw payload, never a default.

use super::{
    AgentError, Decision, PredictRequest, Predictor, PredictorOutput, Verifier, VerifierVerdict, VerifyRequest,
};
use crate::score::EfficiencyScore;
use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{TcpStream, ToSocketAddrs};
use std::time::Duration;

pub const AGENT_PROTOCOL: &str = "lipogate-agent/1";
pub const PROMPT_VERSION: u32 = 1;
pub const DEFAULT_TOKEN_ENV: &str = "LIPOGATE_REMOTE_TOKEN";

const PREDICTOR_SYSTEM: &str = include_str!("../../assets/prompts/predictor.system.v1.txt");
const PREDICTOR_USER: &str = include_str!("../../assets/prompts/predictor.user.v1.txt");
const VERIFIER_SYSTEM: &str = include_str!("../../assets/prompts/verifier.system.v1.txt");
const VERIFIER_USER: &str = include_str!("../../assets/prompts/verifier.user.v1.txt");

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RemoteConfig {
    /// `host:port` of the agent gateway.
    pub endpoint: String,
    pub timeout_ms: u64,
    /// Extra attempts after the first on transport failures.
    pub max_retries: u32,
    /// Name of the environment variable holding the auth token.
    pub auth_token_env: String,
    pub max_in_flight: usize,
}

impl Default for RemoteConfig {
    fn default() -> Self {
        Self {
            endpoint: String::new(),
            timeout_ms: 30_000,
            max_retries: 2,
            auth_token_env: DEFAULT_TOKEN_ENV.to_string(),
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq, Clone)]
pub struct Message {
    pub role: String,
    pub content: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Request {
    pub protocol: String,
    pub agent: String,
    #[serde(default)]
    pub auth: Option<String>,
    pub messages: Vec<Message>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct Reply {
    #[serde(default)]
    content: Option<String>,
    #[serde(default)]
    error: Option<String>,
}

enum Transport {
    Timeout,
    Other(String),
}

/// Counting semaphore for the in-flight cap.
struct Gate {
    used: Mutex<usize>,
    freed: Condvar,
    cap: usize,
}

impl Gate {
    fn acquire(&self) -> GateGuard<'_> {
        let mut used = self.used.lock();
        while *used >= self.cap {
            self.freed.wait(&mut used);
        }
        *used += 1;
        GateGuard(self)
    }
}

struct GateGuard<'a>(&'a Gate);

impl Drop for GateGuard<'_> {
    fn drop(&mut self) {
        *self.0.used.lock() -= 1;
        self.0.freed.notify_one();
    }
}

pub struct RemoteBackend {
    cfg: RemoteConfig,
    token: Option<String>,
    gate: Gate,
}

impl std::fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("cfg", &self.cfg)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

fn render(template: &str, vars: &[(&str, &str)]) -> String {
    vars.iter()
        .fold(template.to_string(), |s, (k, v)| s.replace(&format!("{{{{{k}}}}}"), v))
}

impl RemoteBackend {
    pub fn new(cfg: RemoteConfig) -> Result<Self, AgentError> {
        if cfg.endpoint.trim().is_empty() {
            return Err(AgentError::Config("remote endpoint is empty".into()));
        }
        if cfg.timeout_ms == 0 || cfg.max_in_flight == 0 {
            return Err(AgentError::Config("timeout_ms and max_in_flight must be positive".into()));
        }
        let token = std::env::var(&cfg.auth_token_env).ok();
        if token.is_none() {
            log::warn!("{} is not set; remote calls will carry no auth token", cfg.auth_token_env);
        }
        Ok(Self::with_token(cfg, token))
    }

    /// Like [`RemoteBackend::new`] with an explicit token instead of the
    /// environment lookup.
    pub fn with_token(cfg: RemoteConfig, token: Option<String>) -> Self {
        let cap = cfg.max_in_flight.max(1);
        Self {
            cfg,
            token,
            gate: Gate {
                used: Mutex::new(0),
                freed: Condvar::new(),
                cap,
            },
        }
    }

    pub fn predictor_messages(req: &PredictRequest<'_>) -> Vec<Message> {
        let feedback = if req.feedback.is_empty() {
            "(none)".to_string()
        } else {
            req.feedback
                .iter()
                .enumerate()
                .map(|(i, f)| format!("{}. {f}", i + 1))
                .collect::<Vec<_>>()
                .join("\n")
        };
        let round = req.round.to_string();
        let user = render(
            PREDICTOR_USER,
            &[
                ("candidate_id", &req.candidate.id),
                ("round", &round),
                ("smiles", &req.candidate.smiles),
                ("feedback", &feedback),
            ],
        );
        vec![
            Message {
                role: "system".into(),
                content: PREDICTOR_SYSTEM.into(),
            },
            Message {
                role: "user".into(),
                content: user,
            },
        ]
    }

    pub fn verifier_messages(req: &VerifyRequest<'_>) -> Vec<Message> {
        let score = req.y_eff.get().to_string();
        let user = render(VERIFIER_USER, &[("y_eff", &score), ("r_pred", req.r_pred)]);
        vec![
            Message {
                role: "system".into(),
                content: VERIFIER_SYSTEM.into(),
            },
            Message {
                role: "user".into(),
                content: user,
            },
        ]
    }

    fn attempt(&self, line: &str) -> Result<String, Transport> {
        let timeout = Duration::from_millis(self.cfg.timeout_ms);
        let io = |e: std::io::Error| match e.kind() {
            ErrorKind::TimedOut | ErrorKind::WouldBlock => Transport::Timeout,
            _ => Transport::Other(e.to_string()),
        };
        let addr = self
            .cfg
            .endpoint
            .to_socket_addrs()
            .map_err(io)?
            .next()
            .ok_or_else(|| Transport::Other(format!("{} resolves to no address", self.cfg.endpoint)))?;
        let mut stream = TcpStream::connect_timeout(&addr, timeout).map_err(io)?;
        stream.set_read_timeout(Some(timeout)).map_err(io)?;
        stream.set_write_timeout(Some(timeout)).map_err(io)?;
        stream.write_all(line.as_bytes()).map_err(io)?;
        stream.write_all(b"\n").map_err(io)?;
        stream.flush().map_err(io)?;
        let mut reply = String::new();
        let n = BufReader::new(stream).read_line(&mut reply).map_err(io)?;
        if n == 0 || !reply.ends_with('\n') {
            return Err(Transport::Other("connection closed before a full reply line".into()));
        }
        Ok(reply)
    }

    /// One request/reply exchange with retries on transport failures.
    fn call(&self, agent: &str, messages: Vec<Message>) -> Result<String, AgentError> {
        let req = Request {
            protocol: AGENT_PROTOCOL.into(),
            agent: agent.into(),
            auth: self.token.clone(),
            messages,
        };
        let line = serde_json::to_string(&req).expect("request serializes");
        let _slot = self.gate.acquire();
        let attempts = self.cfg.max_retries + 1;
        let mut last = Transport::Other(String::new());
        for i in 0..attempts {
            match self.attempt(&line) {
                Ok(raw) => return parse_envelope(&raw),
                Err(e) => {
                    if let Transport::Other(m) = &e {
                        log::debug!("{agent} attempt {} failed: {m}", i + 1);
                    }
                    last = e;
                }
            }
        }
        Err(match (attempts, last) {
            (1, Transport::Timeout) => AgentError::Timeout(self.cfg.timeout_ms),
            (_, Transport::Timeout) => AgentError::RetriesExhausted {
                attempts,
                last: format!("timed out after {} ms", self.cfg.timeout_ms),
            },
            (_, Transport::Other(m)) => AgentError::RetriesExhausted { attempts, last: m },
        })
    }
}

fn malformed(reason: impl Into<String>, raw: &str) -> AgentError {
    AgentError::MalformedReply {
        reason: reason.into(),
        raw: raw.trim_end().to_string(),
    }
}

fn parse_envelope(raw: &str) -> Result<String, AgentError> {
    let reply: Reply = serde_json::from_str(raw.trim_end()).map_err(|e| malformed(e.to_string(), raw))?;
    match (reply.content, reply.error) {
        (Some(c), None) => Ok(c),
        (None, Some(e)) => Err(AgentError::Remote(e)),
        _ => Err(malformed("reply must carry exactly one of content or error", raw)),
    }
}

/// Extracts the single ```` ```result ```` block as a key/value map.
pub(crate) fn result_block(content: &str) -> Result<HashMap<String, String>, AgentError> {
    let mut blocks = Vec::new();
    let mut lines = content.lines();
    while let Some(l) = lines.next() {
        if l.trim() == "```result" {
            let mut body = Vec::new();
            let mut closed = false;
            for l in lines.by_ref() {
                if l.trim() == "```" {
                    closed = true;
                    break;
                }
                body.push(l);
            }
            if !closed {
                return Err(malformed("unterminated result block", content));
            }
            blocks.push(body);
        }
    }
    let body = match blocks.len() {
        1 => blocks.pop().unwrap(),
        0 => return Err(malformed("no result block", content)),
        n => return Err(malformed(format!("{n} result blocks"), content)),
    };
    let mut map = HashMap::new();
    for l in body.iter().map(|l| l.trim()).filter(|l| !l.is_empty()) {
        let (k, v) = l
            .split_once(':')
            .ok_or_else(|| malformed(format!("line without key: {l:?}"), content))?;
        if map.insert(k.trim().to_string(), v.trim().to_string()).is_some() {
            return Err(malformed(format!("duplicate field {:?}", k.trim()), content));
        }
    }
    Ok(map)
}

pub(crate) fn parse_prediction(content: &str, round: u32) -> Result<PredictorOutput, AgentError> {
    let mut m = result_block(content)?;
    let mut take = |k: &str| m.remove(k);
    let verdict = take("verdict").ok_or_else(|| malformed("missing verdict", content))?;
    let score = take("score");
    let conf = take("confidence").ok_or_else(|| malformed("missing confidence", content))?;
    let reasoning = take("reasoning").ok_or_else(|| malformed("missing reasoning", content))?;
    if let Some(extra) = m.keys().min() {
        return Err(malformed(format!("unexpected field {extra:?}"), content));
    }
    let conf: f64 = conf
        .parse()
        .ok()
        .filter(|c: &f64| (0.0..=1.0).contains(c))
        .ok_or_else(|| malformed(format!("confidence {conf:?} is not a number in [0, 1]"), content))?;
    if reasoning.is_empty() {
        return Err(malformed("empty reasoning", content));
    }
    let decision = match (verdict.as_str(), score) {
        ("toxic", None) => Decision::Unsafe,
        ("toxic", Some(_)) => return Err(malformed("toxic verdict must not carry a score", content)),
        ("non-toxic", Some(s)) => {
            let efficiency = s
                .parse::<u8>()
                .ok()
                .and_then(EfficiencyScore::new)
                .ok_or_else(|| malformed(format!("score {s:?} is not an integer in 1..=10"), content))?;
            Decision::Safe { efficiency, p_eff: None }
        }
        ("non-toxic", None) => return Err(malformed("non-toxic verdict without a score", content)),
        (v, _) => return Err(malformed(format!("unknown verdict {v:?}"), content)),
    };
    Ok(PredictorOutput {
        round,
        decision,
        conf,
        r_pred: reasoning,
    })
}

pub(crate) fn parse_verdict(content: &str) -> Result<VerifierVerdict, AgentError> {
    let mut m = result_block(content)?;
    let verdict = m.remove("verdict").ok_or_else(|| malformed("missing verdict", content))?;
    let reasoning = m.remove("reasoning").filter(|r| !r.is_empty());
    if let Some(extra) = m.keys().min() {
        return Err(malformed(format!("unexpected field {extra:?}"), content));
    }
    match (verdict.as_str(), reasoning) {
        ("1", _) => Ok(VerifierVerdict::consistent(Vec::new())),
        ("0", Some(r)) => Ok(VerifierVerdict::inconsistent(r, Vec::new())),
        ("0", None) => Err(malformed("verdict 0 without reasoning", content)),
        (v, _) => Err(malformed(format!("verdict {v:?} is not 0 or 1"), content)),
    }
}

impl Predictor for RemoteBackend {
    fn predict(&self, req: PredictRequest<'_>) -> Result<PredictorOutput, AgentError> {
        let content = self.call("predictor", Self::predictor_messages(&req))?;
        parse_prediction(&content, req.round)
    }
}

impl Verifier for RemoteBackend {
    fn verify(&self, req: VerifyRequest<'_>) -> Result<VerifierVerdict, AgentError> {
        let content = self.call("verifier", Self::verifier_messages(&req))?;
        parse_verdict(&content)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agents::Candidate;
    use crate::chem::Fingerprint;
    use std::net::TcpListener;
    use std::sync::mpsc;

    fn block(body: &str) -> String {
        format!("Looking at the head group...\n```result\n{body}\n```\n")
    }

    /// Serves the given reply lines, one connection each; `None` drops the
    /// connection without answering.
    fn serve(replies: Vec<Option<String>>) -> (String, mpsc::Receiver<Request>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for reply in replies {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let _ = tx.send(serde_json::from_str::<Request>(&line).unwrap());
                if let Some(r) = reply {
                    let mut s = stream;
                    s.write_all(r.as_bytes()).unwrap();
                    s.write_all(b"\n").unwrap();
                }
            }
        });
        (addr, rx)
    }

    fn content(c: &str) -> Option<String> {
        Some(serde_json::json!({ "content": c }).to_string())
    }

    fn cfg(endpoint: String) -> RemoteConfig {
        RemoteConfig {
            endpoint,
            timeout_ms: 2_000,
            max_retries: 1,
            ..Default::default()
        }
    }

    fn cand() -> Candidate {
        Candidate {
            id: "L7".into(),
            smiles: "CCN(CC)CCOC(=O)CCCCCCCC".into(),
            fingerprint: Fingerprint::empty(256, 2),
        }
    }

    #[test]
    fn predict_round_trip() {
        let reply = block("verdict: non-toxic\nscore: 7\nconfidence: 0.82\nreasoning: tertiary amine head");
        let (addr, rx) = serve(vec![content(&reply)]);
        let b = RemoteBackend::with_token(cfg(addr), Some("s3cret".into()));
        let c = cand();
        let fb = vec!["too optimistic".to_string()];
        let out = b
            .predict(PredictRequest {
                candidate: &c,
                round: 2,
                feedback: &fb,
            })
            .unwrap();
        assert_eq!(out.y_eff().unwrap().get(), 7);
        assert_eq!(out.conf, 0.82);
        assert_eq!(out.round, 2);
        assert_eq!(out.r_pred, "tertiary amine head");

        let req = rx.recv().unwrap();
        assert_eq!(req.protocol, AGENT_PROTOCOL);
        assert_eq!(req.agent, "predictor");
        assert_eq!(req.auth.as_deref(), Some("s3cret"));
        assert_eq!(req.messages[0].role, "system");
        let user = &req.messages[1].content;
        assert!(user.contains("L7") && user.contains("round 2") && user.contains("1. too optimistic"), "{user}");
        assert!(!user.contains("{{"));
    }

    #[test]
    fn retries_then_succeeds() {
        let ok = block("verdict: 0\nreasoning: score ignores the ester count");
        let (addr, _rx) = serve(vec![None, content(&ok)]);
        let b = RemoteBackend::with_token(cfg(addr), None);
        let v = b
            .verify(VerifyRequest {
                candidate_id: "L7",
                round: 1,
                r_pred: "because",
                y_eff: EfficiencyScore::new(4).unwrap(),
            })
            .unwrap();
        assert_eq!(v.r_corr(), Some("score ignores the ester count"));
    }

    #[test]
    fn retry_exhaustion_and_timeout() {
        let (addr, _rx) = serve(vec![None, None]);
        let b = RemoteBackend::with_token(cfg(addr), None);
        let c = cand();
        let err = b.predict(PredictRequest {
            candidate: &c,
            round: 1,
            feedback: &[],
        });
        assert!(matches!(err, Err(AgentError::RetriesExhausted { attempts: 2, .. })), "{err:?}");

        // a listener that accepts but never answers
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap().to_string();
        let b = RemoteBackend::with_token(
            RemoteConfig {
                endpoint: addr,
                timeout_ms: 100,
                max_retries: 0,
                ..Default::default()
            },
            None,
        );
        let err = b.predict(PredictRequest {
            candidate: &c,
            round: 1,
            feedback: &[],
        });
        assert!(matches!(err, Err(AgentError::Timeout(100))), "{err:?}");
        drop(listener);
    }

    #[test]
    fn remote_error_is_typed() {
        let (addr, _rx) = serve(vec![Some(r#"{"error":"model overloaded"}"#.into())]);
        let b = RemoteBackend::with_token(cfg(addr), None);
        let c = cand();
        let err = b.predict(PredictRequest {
            candidate: &c,
            round: 1,
            feedback: &[],
        });
        assert!(matches!(err, Err(AgentError::Remote(m)) if m == "model overloaded"));
    }

    #[test]
    fn strict_prediction_parsing() {
        let bad = [
            "no block at all",
            "```result\nverdict: non-toxic\nconfidence: 0.9\nreasoning: x\n```",
            "```result\nverdict: toxic\nscore: 3\nconfidence: 0.9\nreasoning: x\n```",
            "```result\nverdict: non-toxic\nscore: 11\nconfidence: 0.9\nreasoning: x\n```",
            "```result\nverdict: non-toxic\nscore: 5\nconfidence: 1.2\nreasoning: x\n```",
            "```result\nverdict: non-toxic\nscore: 5\nconfidence: 0.5\n```",
            "```result\nverdict: non-toxic\nscore: 5\nconfidence: 0.5\nreasoning: x\nmood: good\n```",
            "```result\nverdict: non-toxic\nscore: 5\nscore: 6\nconfidence: 0.5\nreasoning: x\n```",
            "```result\nverdict: non-toxic\nscore: 5\nconfidence: 0.5\nreasoning: x",
            "```result\nverdict: toxic\nconfidence: 0.5\nreasoning: x\n```\n```result\nverdict: toxic\nconfidence: 0.5\nreasoning: x\n```",
        ];
        for b in bad {
            match parse_prediction(b, 1) {
                Err(AgentError::MalformedReply { raw, .. }) => assert_eq!(raw, b.trim_end()),
                other => panic!("{b:?} -> {other:?}"),
            }
        }
        let toxic = parse_prediction(&block("verdict: toxic\nconfidence: 0.9\nreasoning: quaternary"), 1).unwrap();
        assert!(toxic.y_tox() && toxic.y_eff().is_none());
    }

    #[test]
    fn strict_verdict_parsing() {
        assert!(parse_verdict(&block("verdict: 1")).unwrap().is_consistent());
        assert!(parse_verdict(&block("verdict: 0")).is_err());
        assert!(parse_verdict(&block("verdict: yes\nreasoning: x")).is_err());
        assert!(parse_envelope(r#"{"content":"a","error":"b"}"#).is_err());
        assert!(parse_envelope("not json").is_err());
    }
}
