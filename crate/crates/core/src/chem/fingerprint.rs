//! Circular (Morgan-style) fingerprints.
//!
//! Every atom gets a radius-0 identifier hashed from its own invariants.
//! The radius-r identifier hashes the atom's radius-(r-1) identifier with
//! the sorted multiset of `(bond order, neighbor radius-(r-1) identifier)`
//! pairs, so identifiers never depend on the order atoms were written in.
//! An identifier is emitted for radius r only if the atom has at least one
//! atom at graph distance exactly r; otherwise the neighborhood did not grow
//! and the bit would duplicate a smaller radius.
//!
//! Hashing is FNV-1a 64 keyed with [`HASH_SEED`], followed by the SplitMix64
//! finalizer so that the low bits used for `hash mod nbits` are well mixed.
//! Inputs are fed as explicit little-endian bytes, never through `Hash`
//! impls, which keeps bit positions stable across platforms and releases.

use super::graph::MolGraph;
use super::ChemError;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::hash::Hasher;

/// Pinned key for the fingerprint hash. Changing it changes every bit.
pub const HASH_SEED: u64 = 0x4c49_504f_4741_5445;

pub const DEFAULT_RADIUS: u8 = 2;
pub const DEFAULT_NBITS: u32 = 2048;
pub const MAX_RADIUS: u8 = 4;
pub const MIN_NBITS: u32 = 256;
pub const MAX_NBITS: u32 = 65536;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FingerprintParams {
    pub radius: u8,
    pub nbits: u32,
    pub hash_seed: u64,
}

impl Default for FingerprintParams {
    fn default() -> Self {
        Self {
            radius: DEFAULT_RADIUS,
            nbits: DEFAULT_NBITS,
            hash_seed: HASH_SEED,
        }
    }
}

impl FingerprintParams {
    pub fn validate(&self) -> Result<(), ChemError> {
        if self.radius > MAX_RADIUS {
            return Err(ChemError::BadFingerprintParams(format!(
                "radius {} outside [0, {MAX_RADIUS}]",
                self.radius
            )));
        }
        if !self.nbits.is_power_of_two() || !(MIN_NBITS..=MAX_NBITS).contains(&self.nbits) {
            return Err(ChemError::BadFingerprintParams(format!(
                "nbits {} is not a power of two in [{MIN_NBITS}, {MAX_NBITS}]",
                self.nbits
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    words: Vec<u64>,
    nbits: u32,
    radius: u8,
}

impl Fingerprint {
    pub fn empty(nbits: u32, radius: u8) -> Self {
        Self {
            words: vec![0; (nbits as usize).div_ceil(64)],
            nbits,
            radius,
        }
    }

    /// Builds a fingerprint from explicit bit indices. Any length is
    /// accepted, which is handy for toy models.
    pub fn from_bits(nbits: u32, radius: u8, on: impl IntoIterator<Item = usize>) -> Self {
        let mut fp = Self::empty(nbits, radius);
        for i in on {
            fp.set(i);
        }
        fp
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.nbits as usize, "bit {i} out of range");
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.nbits as usize && self.words[i / 64] & (1 << (i % 64)) != 0
    }

    pub fn nbits(&self) -> u32 {
        self.nbits
    }

    pub fn radius(&self) -> u8 {
        self.radius
    }

    pub fn popcount(&self) -> u32 {
        self.words.iter().map(|w| w.count_ones()).sum()
    }

    /// Indices of set bits in ascending order.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(wi, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(wi * 64 + tz)
            })
        })
    }

    pub fn to_hex(&self) -> String {
        self.words.iter().map(|w| format!("{w:016x}")).collect()
    }
}

struct EnvHasher(fnv::FnvHasher);

impl EnvHasher {
    fn new(seed: u64) -> Self {
        Self(fnv::FnvHasher::with_key(seed))
    }

    fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.0.write(b);
        self
    }

    fn u64(&mut self, v: u64) -> &mut Self {
        self.bytes(&v.to_le_bytes())
    }

    fn finish(&self) -> u64 {
        splitmix64(self.0.finish())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fingerprint(graph: &MolGraph, params: &FingerprintParams) -> Result<Fingerprint, ChemError> {
    params.validate()?;
    if graph.is_empty() {
        return Err(ChemError::EmptyGraph);
    }
    let n = graph.atom_count();
    let mask = params.nbits as u64 - 1;
    let mut fp = Fingerprint::empty(params.nbits, params.radius);

    let mut env: Vec<u64> = graph
        .atoms
        .iter()
        .map(|a| {
            let mut h = EnvHasher::new(params.hash_seed);
            h.bytes(&[0])
                .bytes(a.element.as_bytes())
                .bytes(&[0xff, a.aromatic as u8, a.charge as u8, a.explicit_h]);
            h.finish()
        })
        .collect();
    for &e in &env {
        fp.set((e & mask) as usize);
    }
    if params.radius == 0 {
        return Ok(fp);
    }

    let eccentric = shell_sizes(graph, params.radius);
    // neighbor bond order per adjacency slot
    let orders: Vec<Vec<u8>> = (0..n)
        .map(|a| {
            graph.adjacency[a]
                .iter()
                .map(|&b| graph.bond_between(a, b).map(|bd| bd.order.code()).unwrap_or(1))
                .collect()
        })
        .collect();

    for r in 1..=params.radius {
        let next: Vec<u64> = (0..n)
            .map(|a| {
                let mut nbrs: Vec<(u8, u64)> = graph.adjacency[a]
                    .iter()
                    .zip(&orders[a])
                    .map(|(&b, &o)| (o, env[b]))
                    .collect();
                nbrs.sort_unstable();
                let mut h = EnvHasher::new(params.hash_seed);
                h.bytes(&[r]).u64(env[a]).u64(nbrs.len() as u64);
                for (o, e) in nbrs {
                    h.bytes(&[o]).u64(e);
                }
                h.finish()
            })
            .collect();
        for a in 0..n {
            if eccentric[a] >= r {
                fp.set((next[a] & mask) as usize);
            }
        }
        env = next;
    }
    Ok(fp)
}

/// For each atom, the largest distance d ≤ `limit` such that some atom sits
/// at exactly distance d (0 for isolated atoms).
fn shell_sizes(graph: &MolGraph, limit: u8) -> Vec<u8> {
    let n = graph.atom_count();
    let mut out = vec![0u8; n];
    let mut dist = vec![u8::MAX; n];
    let mut queue = VecDeque::new();
    for (start, slot) in out.iter_mut().enumerate() {
        dist.iter_mut().for_each(|d| *d = u8::MAX);
        dist[start] = 0;
        queue.clear();
        queue.push_back(start);
        let mut far = 0;
        while let Some(a) = queue.pop_front() {
            let d = dist[a];
            far = far.max(d);
            if d == limit {
                continue;
            }
            for &b in &graph.adjacency[a] {
                if dist[b] == u8::MAX {
                    dist[b] = d + 1;
                    queue.push_back(b);
                }
            }
        }
        *slot = far;
    }
    out
}
