//! Sample-time upsampling.
//!
//! One weight map is built per signal, each is normalized on its own, and
//! the results are combined as a convex mixture. A signal with mixture weight
//! λ can therefore never account for more than λ of the total mass.
//! Sampling happens at cluster granularity; repeated draws of a cluster rotate
//! through its retained variants.

use std::collections::{BTreeMap, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dedup::DuplicateCluster;
use crate::error::{Error, Result};
use crate::quality::AnnotatedDoc;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Transform {
    Identity,
    /// `boost` when the signal is at least `t`, else 1.
    Threshold { t: f64, boost: f64 },
    /// `min(1 + floor(log2(max(c, 1))), cap)`.
    Log2Sublinear { cap: f64 },
}

impl Transform {
    pub fn apply(&self, value: f64) -> f64 {
        match *self {
            Transform::Identity => value.max(0.0),
            Transform::Threshold { t, boost } => {
                if value >= t {
                    boost
                } else {
                    1.0
                }
            }
            Transform::Log2Sublinear { cap } => (1.0 + value.max(1.0).log2().floor()).min(cap),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Transform::Identity => Ok(()),
            Transform::Threshold { boost, t } if boost >= 0.0 && t.is_finite() => Ok(()),
            Transform::Log2Sublinear { cap } if cap >= 1.0 => Ok(()),
            other => Err(Error::Config(format!("invalid transform {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UpsamplePolicy {
    pub signal: String,
    pub transform: Transform,
    /// Mixture weight; when every policy omits it, weights are uniform.
    #[serde(default)]
    pub lambda: Option<f64>,
}

impl UpsamplePolicy {
    pub fn new(signal: impl Into<String>, transform: Transform) -> Self {
        UpsamplePolicy { signal: signal.into(), transform, lambda: None }
    }
}

/// Mixture weights for `policies`: explicit λ values, or uniform.
pub fn mixture_weights(policies: &[UpsamplePolicy]) -> Result<Vec<f64>> {
    if policies.is_empty() {
        return Err(Error::Config("sampling needs at least one policy".into()));
    }
    for p in policies {
        p.transform.validate()?;
    }
    let given: Vec<Option<f64>> = policies.iter().map(|p| p.lambda).collect();
    if given.iter().all(Option::is_none) {
        return Ok(vec![1.0 / policies.len() as f64; policies.len()]);
    }
    given
        .into_iter()
        .zip(policies)
        .map(|(l, p)| {
            l.ok_or_else(|| {
                Error::Config(format!("policy `{}` has no lambda while others do", p.signal))
            })
        })
        .collect()
}

/// Non-negative weight per document, derived from one signal.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightMap {
    pub signal: String,
    pub weights: BTreeMap<String, f64>,
}

impl WeightMap {
    fn total(&self) -> f64 {
        self.weights.values().sum()
    }
}

pub fn build_weight_map<'a, I>(docs: I, policy: &UpsamplePolicy) -> Result<WeightMap>
where
    I: IntoIterator<Item = &'a AnnotatedDoc>,
{
    let mut weights = BTreeMap::new();
    for d in docs {
        let v = d
            .signals
            .get(&policy.signal)
            .ok_or_else(|| Error::UnknownSignal(policy.signal.clone()))?;
        let w = policy.transform.apply(v);
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::Invalid(format!(
                "signal `{}` gives weight {w} for `{}`",
                policy.signal, d.doc.doc_id
            )));
        }
        weights.insert(d.doc.doc_id.clone(), w);
    }
    Ok(WeightMap { signal: policy.signal.clone(), weights })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergedDistribution {
    /// Probability per doc_id, ascending by doc_id.
    pub probabilities: Vec<(String, f64)>,
    pub mixture_weights: BTreeMap<String, f64>,
}

impl MergedDistribution {
    pub fn get(&self, doc_id: &str) -> f64 {
        self.probabilities
            .binary_search_by(|(d, _)| d.as_str().cmp(doc_id))
            .map(|i| self.probabilities[i].1)
            .unwrap_or(0.0)
    }

    pub fn len(&self) -> usize {
        self.probabilities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.probabilities.is_empty()
    }

    /// Restricts to `keep` and renormalizes.
    pub fn restrict<F: Fn(&str) -> bool>(&self, keep: F) -> Result<MergedDistribution> {
        let kept: Vec<(String, f64)> =
            self.probabilities.iter().filter(|(d, _)| keep(d)).cloned().collect();
        let total: f64 = kept.iter().map(|(_, p)| p).sum();
        if total.is_nan() || total <= 0.0 {
            return Err(Error::Invalid("restricted distribution has no mass".into()));
        }
        Ok(MergedDistribution {
            probabilities: kept.into_iter().map(|(d, p)| (d, p / total)).collect(),
            mixture_weights: self.mixture_weights.clone(),
        })
    }
}

/// `p(d) = Σ_s λ_s · w_s(d) / Σ_d' w_s(d')`.
pub fn merge_distributions(maps: &[WeightMap], lambdas: &[f64]) -> Result<MergedDistribution> {
    if maps.is_empty() || maps.len() != lambdas.len() {
        return Err(Error::Config(format!(
            "{} weight maps but {} mixture weights",
            maps.len(),
            lambdas.len()
        )));
    }
    if lambdas.iter().any(|&l| !(l >= 0.0 && l.is_finite())) {
        return Err(Error::Config("mixture weights must be finite and non-negative".into()));
    }
    let sum: f64 = lambdas.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("mixture weights sum to {sum}, expected 1")));
    }
    let mut acc: BTreeMap<&str, f64> = BTreeMap::new();
    let mut mixture = BTreeMap::new();
    for (map, &lambda) in maps.iter().zip(lambdas) {
        let total = map.total();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::Invalid(format!("weight map for `{}` has no mass", map.signal)));
        }
        *mixture.entry(map.signal.clone()).or_insert(0.0) += lambda;
        for (d, &w) in &map.weights {
            *acc.entry(d.as_str()).or_insert(0.0) += lambda * (w / total);
        }
    }
    Ok(MergedDistribution {
        probabilities: acc.into_iter().map(|(d, p)| (d.to_string(), p)).collect(),
        mixture_weights: mixture,
    })
}

/// Round-robin over retained variants.
pub fn select_variant(cluster: &DuplicateCluster, repetition_index: u64) -> Result<&str> {
    if cluster.retained_ids.is_empty() {
        return Err(Error::Invalid(format!("cluster {} has no retained ids", cluster.cluster_id)));
    }
    let i = (repetition_index % cluster.retained_ids.len() as u64) as usize;
    Ok(&cluster.retained_ids[i])
}

/// Inverse-CDF sampler over a merged distribution.
#[derive(Debug, Clone)]
pub struct Sampler<'a> {
    ids: Vec<&'a str>,
    cumulative: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub fn new(dist: &'a MergedDistribution) -> Result<Self> {
        let mut acc = 0.0;
        let mut ids = Vec::with_capacity(dist.len());
        let mut cumulative = Vec::with_capacity(dist.len());
        for (d, p) in &dist.probabilities {
            if *p > 0.0 {
                acc += p;
                ids.push(d.as_str());
                cumulative.push(acc);
            }
        }
        if ids.is_empty() {
            return Err(Error::Invalid("cannot sample from an empty distribution".into()));
        }
        Ok(Sampler { ids, cumulative })
    }

    pub fn sample<R: Rng>(&self, rng: &mut R) -> &'a str {
        let total = *self.cumulative.last().expect("non-empty");
        let u = rng.gen::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.ids.len() - 1);
        self.ids[i]
    }
}

/// Per-cluster repetition counters feeding [`select_variant`].
#[derive(Debug)]
pub struct VariantRotation<'a> {
    by_doc: HashMap<&'a str, &'a DuplicateCluster>,
    counters: HashMap<u64, u64>,
}

impl<'a> VariantRotation<'a> {
    pub fn new(clusters: &'a [DuplicateCluster]) -> Self {
        let mut by_doc = HashMap::new();
        for c in clusters {
            for id in &c.retained_ids {
                by_doc.insert(id.as_str(), c);
            }
        }
        VariantRotation { by_doc, counters: HashMap::new() }
    }

    /// Variant to emit for a draw of the cluster containing `doc_id`.
    pub fn next(&mut self, doc_id: &'a str) -> Result<&'a str> {
        match self.by_doc.get(doc_id) {
            Some(&c) => {
                let n = self.counters.entry(c.cluster_id).or_insert(0);
                let v = select_variant(c, *n)?;
                *n += 1;
                Ok(v)
            }
            None => Ok(doc_id),
        }
    }
}

/// `n` seeded draws; each draw of a cluster advances its variant rotation.
pub fn draw(
    dist: &MergedDistribution,
    clusters: &[DuplicateCluster],
    seed: u64,
    n: usize,
) -> Result<Vec<String>> {
    let sampler = Sampler::new(dist)?;
    let mut rotation = VariantRotation::new(clusters);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| rotation.next(sampler.sample(&mut rng)).map(str::to_string))
        .collect()
}

/// Clusters restricted to retained variants that survived filtering, keyed
/// for sampling by their first surviving variant.
pub fn sampling_units(
    clusters: &[DuplicateCluster],
    docs: &[AnnotatedDoc],
) -> Vec<DuplicateCluster> {
    let alive: std::collections::HashSet<&str> =
        docs.iter().map(|d| d.doc.doc_id.as_str()).collect();
    clusters
        .iter()
        .filter_map(|c| {
            let retained: Vec<String> =
                c.retained_ids.iter().filter(|id| alive.contains(id.as_str())).cloned().collect();
            (!retained.is_empty()).then(|| DuplicateCluster { retained_ids: retained, ..c.clone() })
        })
        .collect()
}

/// Documents eligible for weighting: one representative per sampling unit.
pub fn representatives<'a>(
    units: &[DuplicateCluster],
    docs: &'a [AnnotatedDoc],
) -> Vec<&'a AnnotatedDoc> {
    let by_id: HashMap<&str, &AnnotatedDoc> =
        docs.iter().map(|d| (d.doc.doc_id.as_str(), d)).collect();
    let mut reps: Vec<&AnnotatedDoc> =
        units.iter().filter_map(|u| u.canonical().and_then(|id| by_id.get(id).copied())).collect();
    reps.sort_by(|a, b| a.doc.doc_id.cmp(&b.doc.doc_id));
    reps
}

/// Builds every configured weight map over the representatives and merges them.
pub fn build_distribution(
    reps: &[&AnnotatedDoc],
    policies: &[UpsamplePolicy],
) -> Result<(Vec<WeightMap>, MergedDistribution)> {
    let lambdas = mixture_weights(policies)?;
    let maps = policies
        .iter()
        .map(|p| build_weight_map(reps.iter().copied(), p))
        .collect::<Result<Vec<_>>>()?;
    let merged = merge_distributions(&maps, &lambdas)?;
    Ok((maps, merged))
}

/// One line of the weights file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightRecord {
    pub doc_id: String,
    pub weights: BTreeMap<String, f64>,
    pub probability: f64,
}

pub fn weight_records(maps: &[WeightMap], merged: &MergedDistribution) -> Vec<WeightRecord> {
    merged
        .probabilities
        .iter()
        .map(|(d, p)| WeightRecord {
            doc_id: d.clone(),
            weights: maps
                .iter()
                .filter_map(|m| m.weights.get(d).map(|&w| (m.signal.clone(), w)))
                .collect(),
            probability: *p,
        })
        .collect()
}

pub fn default_policies() -> Vec<UpsamplePolicy> {
    vec![UpsamplePolicy::new(
        crate::quality::FREQ_OCCURRENCE,
        Transform::Log2Sublinear { cap: 6.0 },
    )]
}
