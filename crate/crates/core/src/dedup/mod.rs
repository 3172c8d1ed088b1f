//! Exact and fuzzy deduplication.
//!
//! Documents are linked when they share a content hash or when an LSH
//! candidate pair has exact shingle Jaccard at or above the threshold. Clusters
//! are connected components of that graph, so two members of one cluster are
//! either directly similar or joined through a chain of similar documents;
//! pairwise similarity between arbitrary members is not guaranteed.
//!
//! Each cluster keeps up to `top_k` ranked variants and its natural frequency
//! signals. Nothing here reweights documents; the signals are only recorded.

mod minhash;
mod union_find;

pub use minhash::{
    candidate_index_pairs, lsh_candidate_pairs, minhash_signature, shingle, MinHashSignature,
    MinHasher, ShingleSet,
};
pub use union_find::UnionFind;

use std::cmp::Ordering;
use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::error::{Error, Result};

pub const EXTRA_CLUSTER_ID: &str = "cluster_id";
pub const EXTRA_RETAINED: &str = "retained";
pub const EXTRA_RETAIN_RANK: &str = "retain_rank";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DedupConfig {
    /// Shingle width in words.
    pub shingle_width: usize,
    pub num_perm: usize,
    pub bands: usize,
    pub rows: usize,
    pub jaccard_threshold: f64,
    pub top_k: usize,
    pub perm_seed: u64,
}

impl Default for DedupConfig {
    fn default() -> Self {
        DedupConfig {
            shingle_width: 5,
            num_perm: 128,
            bands: 16,
            rows: 8,
            jaccard_threshold: 0.8,
            top_k: 3,
            perm_seed: 0x5e_ed0f_d3d0,
        }
    }
}

impl DedupConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shingle_width == 0 {
            return Err(Error::Config("dedup.shingle_width must be >= 1".into()));
        }
        if self.num_perm == 0 || self.bands * self.rows != self.num_perm {
            return Err(Error::Config(format!(
                "dedup: bands * rows must equal num_perm ({} * {} != {})",
                self.bands, self.rows, self.num_perm
            )));
        }
        if !(self.jaccard_threshold > 0.0 && self.jaccard_threshold <= 1.0) {
            return Err(Error::Config(format!(
                "dedup.jaccard_threshold must be in (0, 1], got {}",
                self.jaccard_threshold
            )));
        }
        if self.top_k == 0 {
            return Err(Error::Config("dedup.top_k must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrequencySignals {
    pub occurrence_count: u64,
    pub snapshot_count: u64,
    pub domain_count: u64,
}

impl FrequencySignals {
    pub fn of<'a>(members: impl IntoIterator<Item = &'a Document>) -> Self {
        let mut snapshots = BTreeSet::new();
        let mut domains = BTreeSet::new();
        let mut n = 0;
        for d in members {
            n += 1;
            snapshots.insert(d.snapshot_id.as_str());
            domains.insert(d.domain.as_str());
        }
        FrequencySignals {
            occurrence_count: n,
            snapshot_count: snapshots.len() as u64,
            domain_count: domains.len() as u64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DuplicateCluster {
    pub cluster_id: u64,
    /// All members, ascending by doc_id.
    pub member_ids: Vec<String>,
    /// Ranked variants kept for sampling; the first is canonical.
    pub retained_ids: Vec<String>,
    #[serde(flatten)]
    pub signals: FrequencySignals,
}

impl DuplicateCluster {
    pub fn canonical(&self) -> Option<&str> {
        self.retained_ids.first().map(String::as_str)
    }
}

/// Longer normalized text first, then smaller doc_id.
pub fn default_rank(a: &Document, b: &Document) -> Ordering {
    b.text
        .chars()
        .count()
        .cmp(&a.text.chars().count())
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Clusters the corpus given verified-or-not candidate index pairs.
///
/// Candidate pairs are kept only when exact shingle Jaccard is at least the
/// threshold. Documents with equal content hashes are always linked.
pub fn build_clusters_from_indices(
    corpus: &Corpus,
    candidates: &[(u32, u32)],
    shingles: &[ShingleSet],
    cfg: &DedupConfig,
) -> Result<Vec<DuplicateCluster>> {
    let docs = corpus.documents();
    if shingles.len() != docs.len() {
        return Err(Error::Invalid(format!(
            "{} shingle sets for {} documents",
            shingles.len(),
            docs.len()
        )));
    }
    let mut edges: Vec<(usize, usize)> = candidates
        .par_iter()
        .filter(|&&(i, j)| {
            shingles[i as usize].jaccard(&shingles[j as usize]) >= cfg.jaccard_threshold
        })
        .map(|&(i, j)| (i as usize, j as usize))
        .collect();

    let mut by_hash: Vec<usize> = (0..docs.len()).collect();
    by_hash.sort_by_key(|&i| (docs[i].content_hash, i));
    for w in by_hash.windows(2) {
        if docs[w[0]].content_hash == docs[w[1]].content_hash {
            edges.push((w[0].min(w[1]), w[0].max(w[1])));
        }
    }
    edges.sort_unstable();
    edges.dedup();

    let mut uf = UnionFind::new(docs.len());
    for (a, b) in edges {
        uf.union(a, b);
    }
    Ok(uf
        .components()
        .into_iter()
        .enumerate()
        .map(|(cid, members)| DuplicateCluster {
            cluster_id: cid as u64,
            signals: FrequencySignals::of(members.iter().map(|&i| &docs[i])),
            member_ids: members.iter().map(|&i| docs[i].doc_id.clone()).collect(),
            retained_ids: Vec::new(),
        })
        .collect())
}

/// [`build_clusters_from_indices`] with candidate pairs given as doc ids.
pub fn build_clusters(
    corpus: &Corpus,
    candidate_pairs: &[(String, String)],
    shingles: &[ShingleSet],
    cfg: &DedupConfig,
) -> Result<Vec<DuplicateCluster>> {
    let lookup = |id: &str| {
        corpus
            .index_of(id)
            .map(|i| i as u32)
            .ok_or_else(|| Error::Invalid(format!("candidate pair names unknown doc `{id}`")))
    };
    let pairs = candidate_pairs
        .iter()
        .map(|(a, b)| {
            let (i, j) = (lookup(a)?, lookup(b)?);
            Ok((i.min(j), i.max(j)))
        })
        .collect::<Result<Vec<_>>>()?;
    build_clusters_from_indices(corpus, &pairs, shingles, cfg)
}

/// Fills `retained_ids` with the top `min(k, |members|)` members under `rank`.
pub fn retain_top_k_by<F>(
    mut cluster: DuplicateCluster,
    corpus: &Corpus,
    k: usize,
    rank: F,
) -> Result<DuplicateCluster>
where
    F: Fn(&Document, &Document) -> Ordering,
{
    let mut members = cluster
        .member_ids
        .iter()
        .map(|id| {
            corpus
                .get(id)
                .ok_or_else(|| Error::Invalid(format!("cluster member `{id}` not in corpus")))
        })
        .collect::<Result<Vec<&Document>>>()?;
    members.sort_by(|a, b| rank(a, b));
    cluster.retained_ids = members.iter().take(k).map(|d| d.doc_id.clone()).collect();
    Ok(cluster)
}

pub fn retain_top_k(
    cluster: DuplicateCluster,
    corpus: &Corpus,
    cfg: &DedupConfig,
) -> Result<DuplicateCluster> {
    retain_top_k_by(cluster, corpus, cfg.top_k, default_rank)
}

#[derive(Debug, Clone)]
pub struct DedupOutput {
    pub clusters: Vec<DuplicateCluster>,
    /// Input corpus with cluster id, retention and frequency signals in `extra`.
    pub corpus: Corpus,
}

/// Full dedup pass: shingle, sign, band, verify, cluster, retain, annotate.
pub fn dedup_corpus(corpus: &Corpus, cfg: &DedupConfig, workers: usize) -> Result<DedupOutput> {
    cfg.validate()?;
    crate::with_workers(workers, || {
        let hasher = MinHasher::new(cfg.num_perm, cfg.perm_seed);
        let shingles: Vec<ShingleSet> = corpus
            .documents()
            .par_iter()
            .map(|d| shingle(&d.text, cfg.shingle_width))
            .collect();
        let signatures = shingles
            .par_iter()
            .map(|s| hasher.signature(s))
            .collect::<Result<Vec<_>>>()?;
        let sig_refs: Vec<&MinHashSignature> = signatures.iter().collect();
        let candidates = candidate_index_pairs(&sig_refs, cfg)?;
        let clusters = build_clusters_from_indices(corpus, &candidates, &shingles, cfg)?
            .into_par_iter()
            .map(|c| retain_top_k(c, corpus, cfg))
            .collect::<Result<Vec<_>>>()?;
        let annotated = annotate_corpus(corpus, &clusters)?;
        Ok(DedupOutput { clusters, corpus: annotated })
    })?
}

/// Writes cluster membership, retention rank and frequency signals into `extra`.
pub fn annotate_corpus(corpus: &Corpus, clusters: &[DuplicateCluster]) -> Result<Corpus> {
    let mut out = corpus.clone();
    for c in clusters {
        for id in &c.member_ids {
            let idx = out
                .index_of(id)
                .ok_or_else(|| Error::Invalid(format!("cluster member `{id}` not in corpus")))?;
            let rank = c.retained_ids.iter().position(|r| r == id);
            let extra = &mut out.documents_mut()[idx].extra;
            extra.insert(EXTRA_CLUSTER_ID.into(), c.cluster_id.to_string());
            extra.insert(EXTRA_RETAINED.into(), if rank.is_some() { "1" } else { "0" }.into());
            match rank {
                Some(r) => extra.insert(EXTRA_RETAIN_RANK.into(), r.to_string()),
                None => extra.remove(EXTRA_RETAIN_RANK),
            };
            extra.insert("freq:occurrence".into(), c.signals.occurrence_count.to_string());
            extra.insert("freq:snapshot".into(), c.signals.snapshot_count.to_string());
            extra.insert("freq:domain".into(), c.signals.domain_count.to_string());
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DedupStats {
    pub docs_in: u64,
    pub clusters: u64,
    pub retained_docs: u64,
    pub non_retained_docs: u64,
    /// 1 - clusters / docs_in.
    pub duplicate_rate: f64,
    pub cluster_size_histogram: std::collections::BTreeMap<u64, u64>,
}

impl DedupStats {
    pub fn of(clusters: &[DuplicateCluster]) -> Self {
        let docs_in: u64 = clusters.iter().map(|c| c.signals.occurrence_count).sum();
        let retained: u64 = clusters.iter().map(|c| c.retained_ids.len() as u64).sum();
        let mut hist = std::collections::BTreeMap::new();
        for c in clusters {
            *hist.entry(c.signals.occurrence_count).or_insert(0) += 1;
        }
        DedupStats {
            docs_in,
            clusters: clusters.len() as u64,
            retained_docs: retained,
            non_retained_docs: docs_in - retained,
            duplicate_rate: if docs_in == 0 {
                0.0
            } else {
                1.0 - clusters.len() as f64 / docs_in as f64
            },
            cluster_size_histogram: hist,
        }
    }
}
