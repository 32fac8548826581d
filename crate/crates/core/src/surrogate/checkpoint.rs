//! Binary checkpoint container.
//!
//! ```text
//! magic    8 bytes   "LGCKPT01"
//! hlen     u32 LE    length of the JSON header
//! header   hlen bytes JSON (format version, dims, metrics, config, digests)
//! weights  f64 LE    layer by layer: w (input-major), then b
//! ```

use super::mlp::{Dense, MlpParams};
use super::train::TrainConfig;
use super::SurrogateError;
use crate::chem::FingerprintParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::io::Write;
use std::path::Path;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"LGCKPT01";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: MlpParams,
    pub epoch: usize,
    pub val_efficiency_accuracy: f64,
    pub val_toxic_accuracy: f64,
    pub fingerprint: FingerprintParams,
    pub config: TrainConfig,
    pub config_digest: String,
    /// Digest of the training records the weights were fitted on.
    pub data_digest: String,
}

#[derive(Serialize, Deserialize)]
struct Header {
    version: u32,
    dims: Vec<usize>,
    epoch: usize,
    val_efficiency_accuracy: f64,
    val_toxic_accuracy: f64,
    fingerprint: FingerprintParams,
    config: TrainConfig,
    config_digest: String,
    data_digest: String,
}

pub fn config_digest(cfg: &TrainConfig) -> String {
    let json = serde_json::to_vec(cfg).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

impl Checkpoint {
    pub fn new(params: MlpParams, epoch: usize, val_eff: f64, val_tox: f64, cfg: &TrainConfig, data_digest: &str) -> Self {
        Self {
            params,
            epoch,
            val_efficiency_accuracy: val_eff,
            val_toxic_accuracy: val_tox,
            fingerprint: cfg.fingerprint,
            config: cfg.clone(),
            config_digest: config_digest(cfg),
            data_digest: data_digest.to_string(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            version: CHECKPOINT_VERSION,
            dims: self.params.dims(),
            epoch: self.epoch,
            val_efficiency_accuracy: self.val_efficiency_accuracy,
            val_toxic_accuracy: self.val_toxic_accuracy,
            fingerprint: self.fingerprint,
            config: self.config.clone(),
            config_digest: self.config_digest.clone(),
            data_digest: self.data_digest.clone(),
        };
        let h = serde_json::to_vec(&header).expect("header serializes");
        let nweights: usize = self.params.layers.iter().map(|l| l.w.len() + l.b.len()).sum();
        let mut out = Vec::with_capacity(12 + h.len() + 8 * nweights);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(h.len() as u32).to_le_bytes());
        out.extend_from_slice(&h);
        for l in &self.params.layers {
            for v in l.w.iter().chain(&l.b) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, SurrogateError> {
        if bytes.len() < 8 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(SurrogateError::BadMagic);
        }
        let corrupt = |m: &str| SurrogateError::Corrupt(m.to_string());
        let hlen = bytes
            .get(8..12)
            .map(|b| u32::from_le_bytes(b.try_into().unwrap()) as usize)
            .ok_or_else(|| corrupt("truncated header length"))?;
        let hbytes = bytes.get(12..12 + hlen).ok_or_else(|| corrupt("truncated header"))?;
        // read the version alone first so a future header layout still
        // reports a version mismatch rather than a parse failure
        #[derive(Deserialize)]
        struct VersionOnly {
            version: u32,
        }
        let v: VersionOnly = serde_json::from_slice(hbytes).map_err(|e| SurrogateError::Corrupt(e.to_string()))?;
        if v.version != CHECKPOINT_VERSION {
            return Err(SurrogateError::VersionMismatch {
                found: v.version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let header: Header = serde_json::from_slice(hbytes).map_err(|e| SurrogateError::Corrupt(e.to_string()))?;
        if header.dims.len() < 2 {
            return Err(corrupt("fewer than two layer dims"));
        }

        let mut floats = bytes[12 + hlen..].chunks_exact(8);
        if floats.remainder().len() != 0 {
            return Err(corrupt("weight block is not a whole number of f64"));
        }
        let mut take = |n: usize| -> Result<Vec<f64>, SurrogateError> {
            (0..n)
                .map(|_| {
                    floats
                        .next()
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .ok_or_else(|| corrupt("truncated weights"))
                })
                .collect()
        };
        let mut layers = Vec::with_capacity(header.dims.len() - 1);
        for d in header.dims.windows(2) {
            let w = take(d[0] * d[1])?;
            let b = take(d[1])?;
            layers.push(Dense {
                inputs: d[0],
                outputs: d[1],
                w,
                b,
            });
        }
        if floats.next().is_some() {
            return Err(corrupt("trailing bytes after weights"));
        }
        let params = MlpParams { layers };
        params.validate().map_err(SurrogateError::InvalidParams)?;
        if params.input_dim() != header.fingerprint.nbits as usize {
            return Err(corrupt("input dim does not match fingerprint nbits"));
        }
        for m in [header.val_efficiency_accuracy, header.val_toxic_accuracy] {
            if !(0.0..=1.0).contains(&m) {
                return Err(corrupt("validation metric outside [0, 1]"));
            }
        }
        Ok(Self {
            params,
            epoch: header.epoch,
            val_efficiency_accuracy: header.val_efficiency_accuracy,
            val_toxic_accuracy: header.val_toxic_accuracy,
            fingerprint: header.fingerprint,
            config: header.config,
            config_digest: header.config_digest,
            data_digest: header.data_digest,
        })
    }

    /// sha256 of the serialized checkpoint.
    pub fn digest(&self) -> String {
        hex::encode(Sha256::digest(self.to_bytes()))
    }

    /// Writes through a temporary file in the same directory and renames it
    /// into place, so a failed save never leaves a partial checkpoint.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), SurrogateError> {
        let path = path.as_ref();
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(&self.to_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| e.error)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, SurrogateError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
