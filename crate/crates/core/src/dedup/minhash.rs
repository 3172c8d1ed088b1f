//! Word shingling, MinHash signatures and LSH banding.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use super::DedupConfig;
use crate::error::{Error, Result};

/// Set of 64-bit hashes of word `width`-grams, stored sorted and unique.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShingleSet {
    hashes: Vec<u64>,
    width: usize,
}

impl ShingleSet {
    pub fn from_hashes(mut hashes: Vec<u64>, width: usize) -> Self {
        hashes.sort_unstable();
        hashes.dedup();
        ShingleSet { hashes, width }
    }

    pub fn hashes(&self) -> &[u64] {
        &self.hashes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn len(&self) -> usize {
        self.hashes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hashes.is_empty()
    }

    /// Exact Jaccard similarity via a sorted merge.
    pub fn jaccard(&self, other: &ShingleSet) -> f64 {
        let (a, b) = (&self.hashes, &other.hashes);
        if a.is_empty() && b.is_empty() {
            return 1.0;
        }
        let (mut i, mut j, mut inter) = (0, 0, 0usize);
        while i < a.len() && j < b.len() {
            match a[i].cmp(&b[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    inter += 1;
                    i += 1;
                    j += 1;
                }
            }
        }
        inter as f64 / (a.len() + b.len() - inter) as f64
    }
}

/// Lowercases, splits on Unicode whitespace and hashes every `width`-word window.
/// Texts shorter than `width` words yield a single shingle over all words.
pub fn shingle(text: &str, width: usize) -> ShingleSet {
    let width = width.max(1);
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    if words.is_empty() {
        return ShingleSet::from_hashes(Vec::new(), width);
    }
    let hash = |ws: &[&str]| xxh3_64(ws.join(" ").as_bytes());
    let hashes = if words.len() < width {
        vec![hash(&words)]
    } else {
        words.windows(width).map(hash).collect()
    };
    ShingleSet::from_hashes(hashes, width)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinHashSignature {
    pub values: Vec<u64>,
    pub perm_seed: u64,
}

impl MinHashSignature {
    /// Fraction of agreeing components.
    pub fn estimate_jaccard(&self, other: &MinHashSignature) -> f64 {
        let n = self.values.len().min(other.values.len());
        if n == 0 {
            return 0.0;
        }
        let eq = self.values.iter().zip(&other.values).filter(|(a, b)| a == b).count();
        eq as f64 / n as f64
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

// murmur3 finalizer; a bijection on u64
fn fmix64(mut k: u64) -> u64 {
    k ^= k >> 33;
    k = k.wrapping_mul(0xff51_afd7_ed55_8ccd);
    k ^= k >> 33;
    k = k.wrapping_mul(0xc4ce_b9fe_1a85_ec53);
    k ^ (k >> 33)
}

/// A family of `num_perm` seeded 64-bit mixing permutations.
#[derive(Debug, Clone)]
pub struct MinHasher {
    keys: Vec<u64>,
    perm_seed: u64,
}

impl MinHasher {
    pub fn new(num_perm: usize, perm_seed: u64) -> Self {
        let mut state = perm_seed;
        let keys = (0..num_perm).map(|_| splitmix64(&mut state)).collect();
        MinHasher { keys, perm_seed }
    }

    pub fn num_perm(&self) -> usize {
        self.keys.len()
    }

    pub fn signature(&self, shingles: &ShingleSet) -> Result<MinHashSignature> {
        if shingles.is_empty() {
            return Err(Error::Invalid("cannot sign an empty shingle set".into()));
        }
        let values = self
            .keys
            .iter()
            .map(|&k| shingles.hashes.iter().map(|&x| fmix64(x ^ k)).min().unwrap_or(u64::MAX))
            .collect();
        Ok(MinHashSignature { values, perm_seed: self.perm_seed })
    }
}

pub fn minhash_signature(shingles: &ShingleSet, cfg: &DedupConfig) -> Result<MinHashSignature> {
    MinHasher::new(cfg.num_perm, cfg.perm_seed).signature(shingles)
}

/// Index pairs `(i, j)`, `i < j`, whose signatures agree on every row of
/// at least one band. Sorted and unique.
pub fn candidate_index_pairs(
    signatures: &[&MinHashSignature],
    cfg: &DedupConfig,
) -> Result<Vec<(u32, u32)>> {
    cfg.validate()?;
    for (i, sig) in signatures.iter().enumerate() {
        if sig.values.len() != cfg.num_perm || sig.perm_seed != cfg.perm_seed {
            return Err(Error::Invalid(format!(
                "signature {i} has {} values with seed {}, expected {} with seed {}",
                sig.values.len(),
                sig.perm_seed,
                cfg.num_perm,
                cfg.perm_seed
            )));
        }
    }
    let rows = cfg.rows;
    let mut pairs: Vec<(u32, u32)> = (0..cfg.bands)
        .into_par_iter()
        .flat_map_iter(|band| {
            let mut buckets: HashMap<&[u64], Vec<u32>> = HashMap::new();
            for (i, sig) in signatures.iter().enumerate() {
                let key = &sig.values[band * rows..(band + 1) * rows];
                buckets.entry(key).or_default().push(i as u32);
            }
            let mut out = Vec::new();
            for members in buckets.into_values() {
                for (a, &i) in members.iter().enumerate() {
                    for &j in &members[a + 1..] {
                        out.push((i, j));
                    }
                }
            }
            out
        })
        .collect();
    pairs.par_sort_unstable();
    pairs.dedup();
    Ok(pairs)
}

/// Candidate duplicate pairs as `(min_id, max_id)`, sorted lexicographically.
pub fn lsh_candidate_pairs(
    signatures: &[(&str, &MinHashSignature)],
    cfg: &DedupConfig,
) -> Result<Vec<(String, String)>> {
    let sigs: Vec<&MinHashSignature> = signatures.iter().map(|(_, s)| *s).collect();
    let mut out: Vec<(String, String)> = candidate_index_pairs(&sigs, cfg)?
        .into_iter()
        .map(|(i, j)| {
            let (a, b) = (signatures[i as usize].0, signatures[j as usize].0);
            if a <= b {
                (a.to_string(), b.to_string())
            } else {
                (b.to_string(), a.to_string())
            }
        })
        .collect();
    out.sort();
    out.dedup();
    Ok(out)
}
