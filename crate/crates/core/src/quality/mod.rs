//! Heuristic filtering and classifier-ensemble annotation.
//!
//! Every signal is kept under its own name in a [`QualitySignalVector`];
//! combining signals is left to the sampling configuration.

mod classifier;
mod heuristics;

pub use classifier::{
    features, train_classifier, Hyper, QualityClassifier, TrainingMeta, FORMAT_VERSION, MAGIC,
};
pub use heuristics::{heuristic_filter, HeuristicReport, HeuristicThresholds, TextStats, Verdict};

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Document};
use crate::dedup::{DuplicateCluster, EXTRA_CLUSTER_ID};
use crate::error::{Error, Result};

pub const FREQ_OCCURRENCE: &str = "freq:occurrence";
pub const FREQ_SNAPSHOT: &str = "freq:snapshot";
pub const FREQ_DOMAIN: &str = "freq:domain";
pub const REQUIRED_TAGS: [&str; 2] = ["code", "math"];

pub fn clf_signal(model_id: &str) -> String {
    format!("clf:{model_id}")
}

pub fn tag_signal(tag: &str) -> String {
    format!("tag:{tag}")
}

/// Named per-document signals. Never collapsed into a composite score.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct QualitySignalVector(pub BTreeMap<String, f64>);

impl QualitySignalVector {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.0.get(name).copied()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.0.keys().map(String::as_str)
    }

    /// Maximum over all `clf:` entries, if any.
    pub fn max_classifier_score(&self) -> Option<f64> {
        self.0
            .iter()
            .filter(|(k, _)| k.starts_with("clf:"))
            .map(|(_, &v)| v)
            .reduce(f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotatedDoc {
    #[serde(flatten)]
    pub doc: Document,
    pub signals: QualitySignalVector,
}

impl AnnotatedDoc {
    pub fn cluster_id(&self) -> Option<u64> {
        self.doc.extra.get(EXTRA_CLUSTER_ID).and_then(|c| c.parse().ok())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRecord {
    pub doc_id: String,
    pub reasons: Vec<String>,
    pub stats: TextStats,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnnotateConfig {
    pub heuristics: HeuristicThresholds,
    pub tag_threshold: f64,
}

impl Default for AnnotateConfig {
    fn default() -> Self {
        AnnotateConfig { heuristics: HeuristicThresholds::default(), tag_threshold: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub p25: f64,
    pub p50: f64,
    pub p75: f64,
    pub max: f64,
}

impl Quantiles {
    /// Nearest-rank quantiles; `None` for an empty sample.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| v[((q * (v.len() - 1) as f64).round()) as usize];
        Some(Quantiles { min: v[0], p25: at(0.25), p50: at(0.5), p75: at(0.75), max: v[v.len() - 1] })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QualityStats {
    pub docs_in: u64,
    pub dropped: u64,
    pub dropped_by_reason: BTreeMap<String, u64>,
    pub docs_out: u64,
    pub signal_quantiles: BTreeMap<String, Quantiles>,
}

impl QualityStats {
    pub fn of(docs: &[AnnotatedDoc], drops: &[DropRecord]) -> Self {
        let mut by_reason = BTreeMap::new();
        for d in drops {
            for r in &d.reasons {
                *by_reason.entry(r.clone()).or_insert(0) += 1;
            }
        }
        let mut values: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for d in docs {
            for (k, &v) in &d.signals.0 {
                values.entry(k).or_default().push(v);
            }
        }
        QualityStats {
            docs_in: (docs.len() + drops.len()) as u64,
            dropped: drops.len() as u64,
            dropped_by_reason: by_reason,
            docs_out: docs.len() as u64,
            signal_quantiles: values
                .into_iter()
                .filter_map(|(k, v)| Quantiles::of(&v).map(|q| (k.to_string(), q)))
                .collect(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct AnnotateOutput {
    /// Retained documents that passed the heuristics, ascending by doc_id.
    pub docs: Vec<AnnotatedDoc>,
    pub drops: Vec<DropRecord>,
}

/// Filters and scores every retained document of a deduplicated corpus.
///
/// `domain_classifiers` maps a tag name to its classifier and must include
/// `code` and `math`.
pub fn annotate(
    corpus: &Corpus,
    clusters: &[DuplicateCluster],
    classifiers: &[QualityClassifier],
    domain_classifiers: &BTreeMap<String, QualityClassifier>,
    cfg: &AnnotateConfig,
) -> Result<AnnotateOutput> {
    let mut ids = BTreeSet::new();
    for c in classifiers {
        if !ids.insert(c.model_id.as_str()) {
            return Err(Error::Config(format!("duplicate classifier id `{}`", c.model_id)));
        }
    }
    for tag in REQUIRED_TAGS {
        if !domain_classifiers.contains_key(tag) {
            return Err(Error::Config(format!("missing `{tag}` domain classifier")));
        }
    }
    if let Some(d) = corpus.iter().find(|d| !d.extra.contains_key(EXTRA_CLUSTER_ID)) {
        return Err(Error::PipelineOrder(format!(
            "document `{}` has no cluster annotation; run dedup first",
            d.doc_id
        )));
    }

    let mut retained: Vec<(&Document, &DuplicateCluster)> = Vec::new();
    for c in clusters {
        for id in &c.retained_ids {
            let doc = corpus.get(id).ok_or_else(|| {
                Error::PipelineOrder(format!("retained document `{id}` not in corpus"))
            })?;
            retained.push((doc, c));
        }
    }
    retained.sort_by(|a, b| a.0.doc_id.cmp(&b.0.doc_id));

    let results: Vec<std::result::Result<AnnotatedDoc, DropRecord>> = retained
        .par_iter()
        .map(|&(doc, cluster)| {
            let report = heuristic_filter(&doc.text, &cfg.heuristics);
            if report.verdict == Verdict::Drop {
                return Err(DropRecord {
                    doc_id: doc.doc_id.clone(),
                    reasons: report.reasons,
                    stats: report.stats,
                });
            }
            let mut s = BTreeMap::new();
            for c in classifiers {
                s.insert(clf_signal(&c.model_id), c.score(&doc.text));
            }
            s.insert(FREQ_OCCURRENCE.into(), cluster.signals.occurrence_count as f64);
            s.insert(FREQ_SNAPSHOT.into(), cluster.signals.snapshot_count as f64);
            s.insert(FREQ_DOMAIN.into(), cluster.signals.domain_count as f64);
            for (tag, c) in domain_classifiers {
                let hit = c.score(&doc.text) >= cfg.tag_threshold;
                s.insert(tag_signal(tag), if hit { 1.0 } else { 0.0 });
            }
            Ok(AnnotatedDoc { doc: doc.clone(), signals: QualitySignalVector(s) })
        })
        .collect();

    let mut docs = Vec::new();
    let mut drops = Vec::new();
    for r in results {
        match r {
            Ok(d) => docs.push(d),
            Err(d) => drops.push(d),
        }
    }
    Ok(AnnotateOutput { docs, drops })
}

/// Cluster lookup by id.
pub fn cluster_index(clusters: &[DuplicateCluster]) -> HashMap<u64, &DuplicateCluster> {
    clusters.iter().map(|c| (c.cluster_id, c)).collect()
}
