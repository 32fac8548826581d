//! Structure–efficiency–toxicity records.
//!
//! Records are stored one JSON object per line. Efficiency measurements
//! come from heterogeneous studies, so [`rescale_scores`] maps each study's
//! raw column onto the shared 1..=10 scale with a per-study min-max map.
//! [`split`] produces the fixed, stratified train/eval partition.

pub mod synth;

pub use synth::LibraryEntry;

use crate::chem;
use crate::score::EfficiencyScore;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::Path;
use thiserror::Error;

/// Name of the rescaling method, written into split manifests.
pub const RESCALE_METHOD: &str = "per-study-min-max-round-half-away";

/// Score assigned to every record of a study whose raw values are all equal.
pub const DEGENERATE_GROUP_SCORE: u8 = 5;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: malformed record: {reason}")]
    Malformed { line: usize, reason: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
    #[error("line {line}: bad SMILES: {source}")]
    BadSmiles {
        line: usize,
        #[source]
        source: chem::ChemError,
    },
    #[error("record {id:?} in study {study:?} is non-toxic but has no raw efficiency")]
    MissingRawEfficiency { id: String, study: String },
    #[error("record {0:?} is non-toxic but has no efficiency score")]
    NotFinalized(String),
    #[error("train_n {train_n} exceeds dataset size {size}")]
    TrainTooLarge { train_n: usize, size: usize },
    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LipidRecord {
    pub id: String,
    pub smiles: String,
    pub source_study: String,
    pub raw_efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efficiency_score: Option<EfficiencyScore>,
    pub toxic: bool,
}

/// Parses dataset text. `#` comment lines and blank lines are skipped; line
/// numbers in errors are 1-based.
pub fn parse_records(text: &str) -> Result<Vec<LipidRecord>, DatasetError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let lineno = i + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let rec: LipidRecord = serde_json::from_str(trimmed).map_err(|e| DatasetError::Malformed {
            line: lineno,
            reason: e.to_string(),
        })?;
        if rec.id.is_empty() {
            return Err(DatasetError::Malformed {
                line: lineno,
                reason: "empty id".into(),
            });
        }
        if let Some(raw) = rec.raw_efficiency {
            if !raw.is_finite() {
                return Err(DatasetError::Malformed {
                    line: lineno,
                    reason: "raw_efficiency is not finite".into(),
                });
            }
        }
        chem::parse_smiles(&rec.smiles).map_err(|source| DatasetError::BadSmiles { line: lineno, source })?;
        if !ids.insert(rec.id.clone()) {
            return Err(DatasetError::DuplicateId { line: lineno, id: rec.id });
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn load_records(path: impl AsRef<Path>) -> Result<Vec<LipidRecord>, DatasetError> {
    parse_records(&std::fs::read_to_string(path)?)
}

pub fn write_records(path: impl AsRef<Path>, records: &[LipidRecord]) -> Result<(), DatasetError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut f, r)?;
        f.write_all(b"\n")?;
    }
    f.flush()?;
    Ok(())
}

/// Parses a screening library (`{id, smiles}` per line). SMILES are not
/// checked here; the screening pipeline reports unparseable ones per
/// candidate.
pub fn parse_library(text: &str) -> Result<Vec<LibraryEntry>, DatasetError> {
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let e: LibraryEntry = serde_json::from_str(trimmed).map_err(|e| DatasetError::Malformed {
            line: i + 1,
            reason: e.to_string(),
        })?;
        if !ids.insert(e.id.clone()) {
            return Err(DatasetError::DuplicateId { line: i + 1, id: e.id });
        }
        out.push(e);
    }
    Ok(out)
}

pub fn load_library(path: impl AsRef<Path>) -> Result<Vec<LibraryEntry>, DatasetError> {
    parse_library(&std::fs::read_to_string(path)?)
}

/// Content hash of a record list (sha256 over its canonical JSON lines).
pub fn records_digest(records: &[LipidRecord]) -> String {
    let mut h = Sha256::new();
    for r in records {
        h.update(serde_json::to_vec(r).expect("record serializes"));
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

/// Every non-toxic record must carry a score before training.
pub fn ensure_finalized(records: &[LipidRecord]) -> Result<(), DatasetError> {
    match records.iter().find(|r| !r.toxic && r.efficiency_score.is_none()) {
        Some(r) => Err(DatasetError::NotFinalized(r.id.clone())),
        None => Ok(()),
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RescaleReport {
    /// Studies that had a constant (or single) raw column.
    pub degenerate_studies: Vec<String>,
}

/// Fills `efficiency_score` for every non-toxic record from its study's raw
/// column: `round(1 + 9·(x − min)/(max − min))`, halves away from zero.
/// Toxic records are left untouched.
pub fn rescale_scores(records: &mut [LipidRecord]) -> Result<RescaleReport, DatasetError> {
    let mut groups: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in records.iter().enumerate() {
        if r.toxic {
            continue;
        }
        if r.raw_efficiency.is_none() {
            return Err(DatasetError::MissingRawEfficiency {
                id: r.id.clone(),
                study: r.source_study.clone(),
            });
        }
        groups.entry(r.source_study.clone()).or_default().push(i);
    }

    let mut report = RescaleReport::default();
    for (study, idxs) in groups {
        let raws: Vec<f64> = idxs.iter().filter_map(|&i| records[i].raw_efficiency).collect();
        let min = raws.iter().copied().fold(f64::INFINITY, f64::min);
        let max = raws.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let degenerate = max <= min;
        if degenerate {
            log::warn!("study {study:?} has a constant efficiency column; assigning score {DEGENERATE_GROUP_SCORE}");
            report.degenerate_studies.push(study.clone());
        }
        for (&i, &x) in idxs.iter().zip(&raws) {
            let score = if degenerate {
                DEGENERATE_GROUP_SCORE
            } else {
                (1.0 + 9.0 * (x - min) / (max - min)).round().clamp(1.0, 10.0) as u8
            };
            records[i].efficiency_score = EfficiencyScore::new(score);
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub eval: Vec<String>,
    pub seed: u64,
    pub manifest_digest: String,
}

/// Sidecar written next to a dataset describing how it was split.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub rescale_method: String,
    pub train_n: usize,
    #[serde(flatten)]
    pub split: DatasetSplit,
}

impl DatasetSplit {
    /// Resolves the id lists against `records`, returning (train, eval).
    pub fn materialize<'a>(&self, records: &'a [LipidRecord]) -> (Vec<&'a LipidRecord>, Vec<&'a LipidRecord>) {
        let by_id: BTreeMap<&str, &LipidRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
        let pick = |ids: &[String]| ids.iter().filter_map(|id| by_id.get(id.as_str()).copied()).collect();
        (pick(&self.train), pick(&self.eval))
    }
}

/// Seeded, stratified split. Toxic and non-toxic records are shuffled
/// separately and `round(train_n · toxic_fraction)` toxic records go to
/// the training side, so both halves keep the class ratio to within one
/// record.
pub fn split(records: &[LipidRecord], seed: u64, train_n: usize) -> Result<DatasetSplit, DatasetError> {
    let size = records.len();
    if train_n > size {
        return Err(DatasetError::TrainTooLarge { train_n, size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut toxic: Vec<&str> = records.iter().filter(|r| r.toxic).map(|r| r.id.as_str()).collect();
    let mut clean: Vec<&str> = records.iter().filter(|r| !r.toxic).map(|r| r.id.as_str()).collect();
    toxic.shuffle(&mut rng);
    clean.shuffle(&mut rng);

    let want_toxic = if size == 0 {
        0
    } else {
        ((train_n as f64) * toxic.len() as f64 / size as f64).round() as usize
    };
    let tox_train = want_toxic.min(toxic.len()).max(train_n.saturating_sub(clean.len()));
    let clean_train = train_n - tox_train;

    let mut train: Vec<String> = toxic[..tox_train]
        .iter()
        .chain(&clean[..clean_train])
        .map(|s| s.to_string())
        .collect();
    let mut eval: Vec<String> = toxic[tox_train..]
        .iter()
        .chain(&clean[clean_train..])
        .map(|s| s.to_string())
        .collect();
    train.shuffle(&mut rng);
    eval.shuffle(&mut rng);
    Ok(DatasetSplit {
        train,
        eval,
        seed,
        manifest_digest: records_digest(records),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: &str, study: &str, raw: Option<f64>, toxic: bool) -> LipidRecord {
        LipidRecord {
            id: id.into(),
            smiles: "CCO".into(),
            source_study: study.into(),
            raw_efficiency: raw,
            efficiency_score: None,
            toxic,
        }
    }

    const FIXTURE: &str = r#"# three records
{"id":"L1","smiles":"CCO","source_study":"s1","raw_efficiency":1.5,"toxic":false}
{"id":"L2","smiles":"C1CC1","source_study":"s1","raw_efficiency":null,"toxic":true}

{"id":"L3","smiles":"CN(C)CCC(=O)O","source_study":"s2","raw_efficiency":3.0,"efficiency_score":4,"toxic":false}
"#;

    #[test]
    fn loads_fixture() {
        let recs = parse_records(FIXTURE).unwrap();
        assert_eq!(recs.len(), 3);
        assert_eq!(recs[0].id, "L1");
        assert_eq!(recs[0].raw_efficiency, Some(1.5));
        assert!(recs[1].toxic && recs[1].raw_efficiency.is_none());
        assert_eq!(recs[2].efficiency_score, EfficiencyScore::new(4));
    }

    #[test]
    fn duplicate_id_reports_line() {
        let text = "{\"id\":\"A\",\"smiles\":\"C\",\"source_study\":\"s\",\"raw_efficiency\":1,\"toxic\":false}\n\
                    {\"id\":\"A\",\"smiles\":\"CC\",\"source_study\":\"s\",\"raw_efficiency\":2,\"toxic\":false}\n";
        match parse_records(text) {
            Err(DatasetError::DuplicateId { line: 2, id }) => assert_eq!(id, "A"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_and_bad_smiles() {
        assert!(matches!(
            parse_records("{\"id\":\"A\"}\n"),
            Err(DatasetError::Malformed { line: 1, .. })
        ));
        let text = "# c\n{\"id\":\"A\",\"smiles\":\"C1CC\",\"source_study\":\"s\",\"raw_efficiency\":1,\"toxic\":false}\n";
        assert!(matches!(
            parse_records(text),
            Err(DatasetError::BadSmiles { line: 2, .. })
        ));
        let text = "{\"id\":\"A\",\"smiles\":\"C\",\"source_study\":\"s\",\"raw_efficiency\":1,\"efficiency_score\":11,\"toxic\":false}\n";
        assert!(matches!(parse_records(text), Err(DatasetError::Malformed { line: 1, .. })));
    }

    #[test]
    fn rescale_examples() {
        let mut recs = vec![
            rec("a", "s", Some(0.0), false),
            rec("b", "s", Some(50.0), false),
            rec("c", "s", Some(100.0), false),
            rec("t", "s", None, true),
        ];
        let rep = rescale_scores(&mut recs).unwrap();
        let scores: Vec<_> = recs.iter().map(|r| r.efficiency_score.map(|s| s.get())).collect();
        assert_eq!(scores, vec![Some(1), Some(6), Some(10), None]);
        assert!(rep.degenerate_studies.is_empty());
    }

    #[test]
    fn rescale_degenerate_groups() {
        let mut recs = vec![
            rec("a", "flat", Some(7.0), false),
            rec("b", "flat", Some(7.0), false),
            rec("c", "flat", Some(7.0), false),
            rec("d", "single", Some(42.0), false),
        ];
        let rep = rescale_scores(&mut recs).unwrap();
        assert!(recs.iter().all(|r| r.efficiency_score.unwrap().get() == 5));
        assert_eq!(rep.degenerate_studies, vec!["flat".to_string(), "single".to_string()]);
    }

    #[test]
    fn rescale_requires_raw_on_non_toxic() {
        let mut recs = vec![rec("a", "s", None, false)];
        assert!(matches!(
            rescale_scores(&mut recs),
            Err(DatasetError::MissingRawEfficiency { .. })
        ));
    }

    fn toy(n_clean: usize, n_toxic: usize) -> Vec<LipidRecord> {
        (0..n_clean)
            .map(|i| rec(&format!("c{i}"), "s", Some(i as f64), false))
            .chain((0..n_toxic).map(|i| rec(&format!("t{i}"), "tox", None, true)))
            .collect()
    }

    #[test]
    fn split_examples() {
        let recs = toy(1200, 400);
        let s = split(&recs, 7, 800).unwrap();
        assert_eq!((s.train.len(), s.eval.len()), (800, 800));
        let train: HashSet<_> = s.train.iter().collect();
        assert!(s.eval.iter().all(|id| !train.contains(id)));
        let tox_train = s.train.iter().filter(|id| id.starts_with('t')).count();
        assert_eq!(tox_train, 200);
        assert_eq!(split(&recs, 7, 800).unwrap(), s);
        assert_ne!(split(&recs, 8, 800).unwrap().train, s.train);

        let empty = split(&recs, 7, 0).unwrap();
        assert!(empty.train.is_empty());
        assert_eq!(empty.eval.len(), 1600);
        assert!(matches!(split(&recs, 7, 1601), Err(DatasetError::TrainTooLarge { .. })));
    }

    proptest! {
        #[test]
        fn rescale_monotone_and_affine_invariant(
            raws in prop::collection::vec(0i32..1000, 1..40),
            a_pow in -2i32..4,
            b in -1000i32..1000,
        ) {
            let a = 2f64.powi(a_pow);
            let mut base: Vec<_> = raws.iter().enumerate()
                .map(|(i, &x)| rec(&i.to_string(), "s", Some(x as f64), false)).collect();
            let mut moved: Vec<_> = raws.iter().enumerate()
                .map(|(i, &x)| rec(&i.to_string(), "s", Some(a * x as f64 + b as f64), false)).collect();
            rescale_scores(&mut base).unwrap();
            rescale_scores(&mut moved).unwrap();
            for (p, q) in base.iter().zip(&moved) {
                prop_assert_eq!(p.efficiency_score, q.efficiency_score);
            }
            for p in &base {
                for q in &base {
                    if p.raw_efficiency <= q.raw_efficiency {
                        prop_assert!(p.efficiency_score <= q.efficiency_score);
                    }
                }
            }
        }

        #[test]
        fn split_is_stratified(n_clean in 0usize..60, n_toxic in 0usize..60, frac in 0.0f64..=1.0, seed in any::<u64>()) {
            let recs = toy(n_clean, n_toxic);
            let size = recs.len();
            let train_n = (frac * size as f64).floor() as usize;
            let s = split(&recs, seed, train_n).unwrap();
            prop_assert_eq!(s.train.len(), train_n);
            prop_assert_eq!(s.train.len() + s.eval.len(), size);
            if train_n > 0 {
                let tf_train = s.train.iter().filter(|id| id.starts_with('t')).count() as f64 / train_n as f64;
                let tf_all = n_toxic as f64 / size as f64;
                prop_assert!((tf_train - tf_all).abs() <= 1.0 / train_n as f64 + 1e-12);
            }
        }
    }
}
