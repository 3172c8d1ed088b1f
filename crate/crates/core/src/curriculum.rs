//! Multi-stage curriculum: plan validation, per-stage eligibility and
//! token-budgeted shard emission.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use xxhash_rust::xxh3::xxh3_64;

use crate::dedup::DuplicateCluster;
use crate::error::{Error, Result};
use crate::quality::{tag_signal, AnnotatedDoc};
use crate::sampling::{MergedDistribution, Sampler, VariantRotation};
use crate::tokenize::Tokenizer;

/// Mixture key matching documents with none of the other listed tags.
pub const OTHER: &str = "other";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSpec {
    pub stage_id: String,
    #[serde(default)]
    pub description: String,
    pub token_share: f64,
    pub quality_threshold: f64,
    /// Signal compared against the threshold; defaults to the max `clf:` score.
    #[serde(default)]
    pub gate_signal: Option<String>,
    /// Tag name (as in `tag:<name>`) or `other` to target token fraction.
    #[serde(default)]
    pub mixture: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StagePlan {
    pub total_token_budget: u64,
    pub stages: Vec<StageSpec>,
}

impl StagePlan {
    /// Four stages: code-heavy start, diverse mix, shift toward quality,
    /// and a small strict anneal.
    pub fn four_stage(total_token_budget: u64) -> Self {
        let mix = |code: f64| BTreeMap::from([("code".to_string(), code), (OTHER.to_string(), 1.0 - code)]);
        let stage = |id: &str, desc: &str, share: f64, th: f64, code: f64| StageSpec {
            stage_id: id.into(),
            description: desc.into(),
            token_share: share,
            quality_threshold: th,
            gate_signal: None,
            mixture: mix(code),
        };
        StagePlan {
            total_token_budget,
            stages: vec![
                stage("i", "code-heavy data for ease of learning", 0.15, 0.0, 0.7),
                stage("ii", "code and natural language, high diversity", 0.45, 0.0, 0.4),
                stage("iii", "code and natural language shifting to higher quality", 0.30, 0.5, 0.4),
                stage("iv", "highest-quality anneal", 0.10, 0.9, 0.4),
            ],
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "violation", rename_all = "snake_case")]
pub enum PlanViolation {
    NoStages,
    SharesNotOne { sum: f64 },
    ShareOutOfRange { stage: String, share: f64 },
    MixtureNotOne { stage: String, sum: f64 },
    NegativeMixture { stage: String },
    ThresholdDecreasing { stage: String },
    FinalNotSmallest,
    FinalNotStrictest,
    DuplicateStageId { stage: String },
}

impl fmt::Display for PlanViolation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PlanViolation::NoStages => write!(f, "plan has no stages"),
            PlanViolation::SharesNotOne { sum } => write!(f, "shares ≠ 1 (sum {sum})"),
            PlanViolation::ShareOutOfRange { stage, share } => {
                write!(f, "stage {stage}: share {share} not in (0, 1)")
            }
            PlanViolation::MixtureNotOne { stage, sum } => {
                write!(f, "stage {stage}: mixture fractions sum to {sum}")
            }
            PlanViolation::NegativeMixture { stage } => {
                write!(f, "stage {stage}: negative mixture fraction")
            }
            PlanViolation::ThresholdDecreasing { stage } => {
                write!(f, "stage {stage}: quality threshold decreases")
            }
            PlanViolation::FinalNotSmallest => write!(f, "final stage must be smallest"),
            PlanViolation::FinalNotStrictest => write!(f, "final stage must be strictest"),
            PlanViolation::DuplicateStageId { stage } => write!(f, "duplicate stage id {stage}"),
        }
    }
}

const SHARE_TOLERANCE: f64 = 1e-9;

/// A plan that passed validation, with integer stage budgets.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidatedPlan {
    pub plan: StagePlan,
    pub budgets: Vec<u64>,
}

impl ValidatedPlan {
    pub fn stage(&self, stage_id: &str) -> Option<(usize, &StageSpec, u64)> {
        self.plan
            .stages
            .iter()
            .position(|s| s.stage_id == stage_id)
            .map(|i| (i, &self.plan.stages[i], self.budgets[i]))
    }
}

pub fn validate_plan(plan: &StagePlan) -> std::result::Result<ValidatedPlan, Vec<PlanViolation>> {
    let mut v = Vec::new();
    let stages = &plan.stages;
    if stages.is_empty() {
        return Err(vec![PlanViolation::NoStages]);
    }
    let sum: f64 = stages.iter().map(|s| s.token_share).sum();
    if (sum - 1.0).abs() > SHARE_TOLERANCE {
        v.push(PlanViolation::SharesNotOne { sum });
    }
    let mut seen = std::collections::BTreeSet::new();
    for (i, s) in stages.iter().enumerate() {
        if !seen.insert(s.stage_id.as_str()) {
            v.push(PlanViolation::DuplicateStageId { stage: s.stage_id.clone() });
        }
        let single = stages.len() == 1 && s.token_share == 1.0;
        if !(s.token_share > 0.0 && s.token_share < 1.0) && !single {
            v.push(PlanViolation::ShareOutOfRange { stage: s.stage_id.clone(), share: s.token_share });
        }
        if !s.mixture.is_empty() {
            if s.mixture.values().any(|&f| f < 0.0) {
                v.push(PlanViolation::NegativeMixture { stage: s.stage_id.clone() });
            }
            let m: f64 = s.mixture.values().sum();
            if (m - 1.0).abs() > SHARE_TOLERANCE {
                v.push(PlanViolation::MixtureNotOne { stage: s.stage_id.clone(), sum: m });
            }
        }
        if i > 0 && s.quality_threshold < stages[i - 1].quality_threshold {
            v.push(PlanViolation::ThresholdDecreasing { stage: s.stage_id.clone() });
        }
    }
    if let Some((last, rest)) = stages.split_last() {
        if rest.iter().any(|s| s.token_share <= last.token_share) {
            v.push(PlanViolation::FinalNotSmallest);
        }
        if rest.iter().any(|s| s.quality_threshold >= last.quality_threshold) {
            v.push(PlanViolation::FinalNotStrictest);
        }
    }
    if !v.is_empty() {
        return Err(v);
    }
    let shares: Vec<f64> = stages.iter().map(|s| s.token_share).collect();
    Ok(ValidatedPlan { budgets: largest_remainder(plan.total_token_budget, &shares), plan: plan.clone() })
}

/// Splits `total` in proportion to `fractions` into integers summing to `total`.
/// Leftover units go to the largest fractional parts, earlier entries first on ties.
pub fn largest_remainder(total: u64, fractions: &[f64]) -> Vec<u64> {
    let sum: f64 = fractions.iter().sum();
    if fractions.is_empty() || sum.is_nan() || sum <= 0.0 {
        return vec![0; fractions.len()];
    }
    let exact: Vec<f64> = fractions.iter().map(|f| total as f64 * f / sum).collect();
    let mut out: Vec<u64> = exact.iter().map(|e| e.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..fractions.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total.saturating_sub(assigned);
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        out[i] += 1;
        left -= 1;
    }
    out
}

/// Gate value of a document for `stage`.
fn gate_value(doc: &AnnotatedDoc, stage: &StageSpec) -> Result<f64> {
    match &stage.gate_signal {
        Some(name) => doc.signals.get(name).ok_or_else(|| Error::UnknownSignal(name.clone())),
        None => doc
            .signals
            .max_classifier_score()
            .ok_or_else(|| Error::UnknownSignal("clf:*".into())),
    }
}

/// Documents whose gating signal reaches the stage threshold.
pub fn stage_eligible<'a>(
    docs: &[&'a AnnotatedDoc],
    stage: &StageSpec,
) -> Result<Vec<&'a AnnotatedDoc>> {
    if stage.quality_threshold <= 0.0 {
        return Ok(docs.to_vec());
    }
    let mut out = Vec::new();
    for &d in docs {
        if gate_value(d, stage)? >= stage.quality_threshold {
            out.push(d);
        }
    }
    Ok(out)
}

/// Seed for one stage, so stages can be re-run independently.
pub fn stage_seed(master_seed: u64, stage_id: &str) -> u64 {
    let mut key = master_seed.to_le_bytes().to_vec();
    key.extend_from_slice(stage_id.as_bytes());
    xxh3_64(&key)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardInfo {
    pub file: String,
    pub tokens: u64,
    pub docs: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShardManifest {
    pub stage_id: String,
    pub seed: u64,
    pub budget: u64,
    pub total_tokens: u64,
    pub max_doc_tokens: u64,
    pub docs_emitted: u64,
    pub eligible_docs: u64,
    pub stratum_tokens: BTreeMap<String, u64>,
    pub shards: Vec<ShardInfo>,
}

impl ShardManifest {
    pub fn file_name(stage_id: &str) -> String {
        format!("stage-{stage_id}.manifest.json")
    }

    /// Re-hashes every shard next to the manifest.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        for s in &self.shards {
            let path = dir.join(&s.file);
            if !path.exists() {
                return Err(Error::MissingArtifacts(vec![path.display().to_string()]));
            }
            let actual = crate::io::sha256_file(&path)?;
            if actual != s.sha256 {
                return Err(Error::Integrity {
                    path,
                    reason: format!("checksum {actual} does not match manifest {}", s.sha256),
                });
            }
        }
        Ok(())
    }
}

/// One line of a stage shard file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShardRecord {
    pub doc_id: String,
    pub token_ids: Vec<u32>,
}

/// Everything [`emit_stage`] needs besides the stage itself.
pub struct EmitContext<'a> {
    /// Sampling units (clusters restricted to surviving retained variants).
    pub units: &'a [DuplicateCluster],
    /// Every annotated document, for variant text lookup.
    pub docs: &'a [AnnotatedDoc],
    pub tokenizer: &'a dyn Tokenizer,
    /// A shard is closed once it holds at least this many tokens.
    pub shard_tokens: u64,
}

struct ShardWriter<'p> {
    dir: &'p Path,
    stage_id: String,
    limit: u64,
    current: Option<(BufWriter<File>, Sha256, ShardInfo)>,
    done: Vec<ShardInfo>,
}

impl ShardWriter<'_> {
    fn push(&mut self, rec: &ShardRecord) -> Result<()> {
        if self.current.is_none() {
            let name = format!("stage-{}-{:05}.jsonl", self.stage_id, self.done.len());
            let path = self.dir.join(&name);
            let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
            let info = ShardInfo { file: name, tokens: 0, docs: 0, sha256: String::new() };
            self.current = Some((BufWriter::new(f), Sha256::new(), info));
        }
        let (w, h, info) = self.current.as_mut().expect("open shard");
        let mut line = serde_json::to_vec(rec)?;
        line.push(b'\n');
        h.update(&line);
        w.write_all(&line).map_err(|e| Error::io(self.dir.join(&info.file), e))?;
        info.tokens += rec.token_ids.len() as u64;
        info.docs += 1;
        if info.tokens >= self.limit {
            self.close()?;
        }
        Ok(())
    }

    fn close(&mut self) -> Result<()> {
        if let Some((mut w, h, mut info)) = self.current.take() {
            w.flush().map_err(|e| Error::io(self.dir.join(&info.file), e))?;
            info.sha256 = hex::encode(h.finalize());
            self.done.push(info);
        }
        Ok(())
    }
}

fn stratum_of<'s>(doc: &AnnotatedDoc, keys: &'s [String], has_other: bool) -> Result<Option<&'s str>> {
    for k in keys {
        let name = tag_signal(k);
        let v = doc.signals.get(&name).ok_or(Error::UnknownSignal(name))?;
        if v >= 1.0 {
            return Ok(Some(k));
        }
    }
    Ok(has_other.then_some(OTHER))
}

/// Draws documents for one stage until its token budget is met, keeping the
/// per-tag token mixture on target, and writes the shard files.
#[allow(clippy::too_many_arguments)]
pub fn emit_stage(
    stage: &StageSpec,
    budget: u64,
    eligible: &[&AnnotatedDoc],
    dist: &MergedDistribution,
    ctx: &EmitContext<'_>,
    seed: u64,
    out_dir: &Path,
) -> Result<ShardManifest> {
    if eligible.is_empty() {
        return Err(Error::Invalid(format!("stage {}: empty eligible set", stage.stage_id)));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    // Strata: listed tags in key order, then `other`.
    let tag_keys: Vec<String> = stage.mixture.keys().filter(|k| *k != OTHER).cloned().collect();
    let has_other = stage.mixture.contains_key(OTHER);
    let mut members: BTreeMap<String, Vec<&str>> = BTreeMap::new();
    for d in eligible {
        let s = if stage.mixture.is_empty() {
            Some("all")
        } else {
            stratum_of(d, &tag_keys, has_other)?
        };
        if let Some(s) = s {
            members.entry(s.to_string()).or_default().push(d.doc.doc_id.as_str());
        }
    }
    let targets: Vec<(String, f64)> = if stage.mixture.is_empty() {
        vec![("all".to_string(), 1.0)]
    } else {
        stage.mixture.iter().filter(|(_, &f)| f > 0.0).map(|(k, &f)| (k.clone(), f)).collect()
    };
    let fractions: Vec<f64> = targets.iter().map(|(_, f)| *f).collect();
    let token_targets = largest_remainder(budget, &fractions);

    let mut strata = Vec::new();
    for ((name, _), target) in targets.iter().zip(&token_targets) {
        let ids = members.get(name).map(Vec::as_slice).unwrap_or(&[]);
        let set: std::collections::HashSet<&str> = ids.iter().copied().collect();
        let sub = dist.restrict(|d| set.contains(d)).map_err(|_| {
            Error::Invalid(format!(
                "stage {}: mixture target `{name}` has no eligible mass",
                stage.stage_id
            ))
        })?;
        strata.push((name.clone(), *target, sub));
    }
    let samplers = strata
        .iter()
        .map(|(_, _, d)| Sampler::new(d))
        .collect::<Result<Vec<_>>>()?;

    let text_of: HashMap<&str, &str> =
        ctx.docs.iter().map(|d| (d.doc.doc_id.as_str(), d.doc.text.as_str())).collect();
    let eligible_ids: std::collections::HashSet<&str> =
        eligible.iter().map(|d| d.doc.doc_id.as_str()).collect();
    let mut max_doc_tokens = 0u64;
    for u in ctx.units {
        if u.canonical().is_some_and(|c| eligible_ids.contains(c)) {
            for v in &u.retained_ids {
                if let Some(t) = text_of.get(v.as_str()) {
                    max_doc_tokens = max_doc_tokens.max(ctx.tokenizer.count(t) as u64);
                }
            }
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rotation = VariantRotation::new(ctx.units);
    let mut emitted = vec![0u64; strata.len()];
    let mut writer = ShardWriter {
        dir: out_dir,
        stage_id: stage.stage_id.clone(),
        limit: ctx.shard_tokens.max(1),
        current: None,
        done: Vec::new(),
    };
    let mut total = 0u64;
    let mut docs_emitted = 0u64;
    while total < budget {
        // the stratum furthest behind its target, relative to target size
        let s = (0..strata.len())
            .filter(|&i| strata[i].1 > 0)
            .min_by(|&a, &b| {
                let ra = emitted[a] as f64 / strata[a].1 as f64;
                let rb = emitted[b] as f64 / strata[b].1 as f64;
                ra.total_cmp(&rb).then(a.cmp(&b))
            })
            .expect("budget > 0 implies a stratum with positive target");
        let rep = samplers[s].sample(&mut rng);
        let variant = rotation.next(rep)?;
        let text = text_of.get(variant).ok_or_else(|| {
            Error::Invalid(format!("variant `{variant}` missing from annotated docs"))
        })?;
        let token_ids = ctx.tokenizer.encode(text);
        if token_ids.is_empty() {
            return Err(Error::Invalid(format!("document `{variant}` has no tokens")));
        }
        let n = token_ids.len() as u64;
        max_doc_tokens = max_doc_tokens.max(n);
        writer.push(&ShardRecord { doc_id: variant.to_string(), token_ids })?;
        emitted[s] += n;
        total += n;
        docs_emitted += 1;
    }
    writer.close()?;

    let manifest = ShardManifest {
        stage_id: stage.stage_id.clone(),
        seed,
        budget,
        total_tokens: total,
        max_doc_tokens,
        docs_emitted,
        eligible_docs: eligible.len() as u64,
        stratum_tokens: strata.iter().map(|(n, _, _)| n.clone()).zip(emitted).collect(),
        shards: writer.done,
    };
    crate::io::write_json(&out_dir.join(ShardManifest::file_name(&stage.stage_id)), &manifest)?;
    Ok(manifest)
}
