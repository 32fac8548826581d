//! Structured reasoning trace emitted by the surrogate predictor and read
//! by the rule-based verifier.
//!
//! One `key: value` pair per line:
//!
//! ```text
//! prediction: non-toxic
//! score: 7
//! confidence: 0.8123
//! distribution: 0.01,0.02,0.01,0.01,0.05,0.1,0.7,0.05,0.03,0.02
//! top_features: 1533:0.71,88:-0.4
//! toxicity_margin: -0.31
//! note: round 2: received 1 correction(s)
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so a parsed trace
//! reproduces the predictor's numbers bit for bit.

use crate::numerics::NUM_CLASSES;
use std::fmt::Write;

#[derive(Debug, Clone, PartialEq)]
pub struct ReasoningTrace {
    pub toxic: bool,
    pub score: Option<u8>,
    pub confidence: f64,
    pub distribution: Option<[f64; NUM_CLASSES]>,
    /// `(fingerprint bit, first-layer contribution)`, strongest first.
    pub top_features: Vec<(usize, f64)>,
    /// `p_tox - 0.5`; positive means the toxicity gate fired.
    pub toxicity_margin: f64,
    pub notes: Vec<String>,
}

impl ReasoningTrace {
    pub fn render(&self) -> String {
        let mut s = String::new();
        let label = if self.toxic { "toxic" } else { "non-toxic" };
        let _ = writeln!(s, "prediction: {label}");
        if let Some(score) = self.score {
            let _ = writeln!(s, "score: {score}");
        }
        let _ = writeln!(s, "confidence: {}", self.confidence);
        if let Some(d) = &self.distribution {
            let parts: Vec<String> = d.iter().map(|v| v.to_string()).collect();
            let _ = writeln!(s, "distribution: {}", parts.join(","));
        }
        let feats: Vec<String> = self.top_features.iter().map(|(b, c)| format!("{b}:{c}")).collect();
        let _ = writeln!(s, "top_features: {}", feats.join(","));
        let _ = writeln!(s, "toxicity_margin: {}", self.toxicity_margin);
        for n in &self.notes {
            let _ = writeln!(s, "note: {n}");
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        let mut toxic = None;
        let mut score = None;
        let mut confidence = None;
        let mut distribution = None;
        let mut top_features = None;
        let mut margin = None;
        let mut notes = Vec::new();
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            let (key, value) = line.split_once(':').ok_or_else(|| format!("no key in line {line:?}"))?;
            let value = value.trim();
            match key.trim() {
                "prediction" => {
                    toxic = Some(match value {
                        "toxic" => true,
                        "non-toxic" => false,
                        other => return Err(format!("unknown prediction {other:?}")),
                    })
                }
                "score" => score = Some(value.parse::<u8>().map_err(|e| format!("score: {e}"))?),
                "confidence" => confidence = Some(parse_f64(value, "confidence")?),
                "distribution" => {
                    let vals = value
                        .split(',')
                        .map(|v| parse_f64(v.trim(), "distribution"))
                        .collect::<Result<Vec<_>, _>>()?;
                    let arr: [f64; NUM_CLASSES] = vals
                        .try_into()
                        .map_err(|v: Vec<f64>| format!("distribution has {} entries", v.len()))?;
                    distribution = Some(arr);
                }
                "top_features" => {
                    let mut feats = Vec::new();
                    for item in value.split(',').map(str::trim).filter(|s| !s.is_empty()) {
                        let (bit, c) = item.split_once(':').ok_or_else(|| format!("bad feature {item:?}"))?;
                        let bit = bit.parse::<usize>().map_err(|e| format!("feature bit: {e}"))?;
                        feats.push((bit, parse_f64(c, "feature weight")?));
                    }
                    top_features = Some(feats);
                }
                "toxicity_margin" => margin = Some(parse_f64(value, "toxicity_margin")?),
                "note" => notes.push(value.to_string()),
                _ => {}
            }
        }
        Ok(Self {
            toxic: toxic.ok_or("missing prediction")?,
            score,
            confidence: confidence.ok_or("missing confidence")?,
            distribution,
            top_features: top_features.ok_or("missing top_features")?,
            toxicity_margin: margin.ok_or("missing toxicity_margin")?,
            notes,
        })
    }
}

fn parse_f64(s: &str, what: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{what}: {e}"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("{what}: not finite"))
    }
}
