//! End-to-end orchestration with resumable, checksummed phases.
//!
//! Each phase writes into its own directory. On success it records a
//! `_phase.json` marker holding the phase key (a hash of its configuration
//! section and the upstream key) and a SHA-256 for every output file. A phase
//! whose marker matches and whose outputs verify is skipped on the next run.
//! While a phase runs its directory carries a `.partial` marker.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::corpus::{ingest_files, Corpus, IngestReport};
use crate::curriculum::{
    emit_stage, stage_eligible, stage_seed, validate_plan, EmitContext, ShardManifest,
    ShardRecord, StagePlan, StageSpec, ValidatedPlan, OTHER,
};
use crate::dedup::{dedup_corpus, DedupConfig, DedupStats, DuplicateCluster};
use crate::error::{Error, Result};
use crate::io::{read_json, read_jsonl, sha256_bytes, sha256_file, write_json, write_jsonl};
use crate::quality::{
    annotate, clf_signal, tag_signal, train_classifier, AnnotateConfig, AnnotatedDoc, DropRecord,
    HeuristicThresholds, Hyper, QualityClassifier, QualityStats, FREQ_DOMAIN, FREQ_OCCURRENCE,
    FREQ_SNAPSHOT, REQUIRED_TAGS,
};
use crate::sampling::{
    build_distribution, default_policies, draw, mixture_weights, representatives,
    sampling_units, weight_records, MergedDistribution, UpsamplePolicy, WeightRecord,
};
use crate::tokenize::WhitespaceTokenizer;
use crate::train_prep::{
    lr_at, pack_documents, packing::write_packed_file, rope_config, LrScheduleSpec, RopeStage,
};

pub const PHASES: [&str; 6] = ["ingest", "dedup", "quality", "sample", "curriculum", "prep"];

const PHASE_MARKER: &str = "_phase.json";
const TIMING_FILE: &str = "_timing.json";
const PARTIAL_MARKER: &str = ".partial";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsConfig {
    pub inputs: Vec<PathBuf>,
    pub work_dir: PathBuf,
    /// Where curriculum shards and packed sequences go; defaults to `work_dir`.
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

/// A classifier given either as a trained model file or as reference sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassifierSource {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub positives: Option<PathBuf>,
    #[serde(default)]
    pub negatives: Option<PathBuf>,
    #[serde(default)]
    pub hyper: Option<Hyper>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QualityConfig {
    pub heuristics: HeuristicThresholds,
    pub tag_threshold: f64,
    pub hyper: Hyper,
    pub classifiers: Vec<ClassifierSource>,
    pub domain: BTreeMap<String, ClassifierSource>,
}

impl Default for QualityConfig {
    fn default() -> Self {
        QualityConfig {
            heuristics: HeuristicThresholds::default(),
            tag_threshold: 0.5,
            hyper: Hyper::default(),
            classifiers: Vec::new(),
            domain: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplingConfig {
    pub policies: Vec<UpsamplePolicy>,
    /// Size of the optional draw manifest written by the sample phase.
    pub draws: usize,
}

impl Default for SamplingConfig {
    fn default() -> Self {
        SamplingConfig { policies: default_policies(), draws: 0 }
    }
}

fn default_shard_tokens() -> u64 {
    1 << 20
}

fn default_vocab() -> u32 {
    102_400
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CurriculumConfig {
    pub total_token_budget: u64,
    pub stages: Vec<StageSpec>,
    #[serde(default = "default_shard_tokens")]
    pub shard_tokens: u64,
    #[serde(default = "default_vocab")]
    pub vocab_size: u32,
}

impl CurriculumConfig {
    pub fn plan(&self) -> StagePlan {
        StagePlan { total_token_budget: self.total_token_budget, stages: self.stages.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepConfig {
    pub rope_stage: RopeStage,
    /// Overrides the RoPE stage's context length.
    pub seq_len: Option<u32>,
    pub pad_id: u32,
    pub lr: Option<LrScheduleSpec>,
}

impl Default for PrepConfig {
    fn default() -> Self {
        PrepConfig { rope_stage: RopeStage::Pretrain, seq_len: None, pad_id: 0, lr: None }
    }
}

impl PrepConfig {
    pub fn seq_len(&self) -> u32 {
        self.seq_len.unwrap_or(rope_config(self.rope_stage).seq_len)
    }
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    pub paths: PathsConfig,
    #[serde(default)]
    pub dedup: DedupConfig,
    #[serde(default)]
    pub quality: QualityConfig,
    #[serde(default)]
    pub sampling: SamplingConfig,
    pub curriculum: CurriculumConfig,
    #[serde(default)]
    pub prep: PrepConfig,
}

impl PipelineConfig {
    /// Parses TOML; relative paths resolve against `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: PipelineConfig = toml::from_str(text)?;
        cfg.resolve_paths(base_dir);
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.paths.inputs.iter_mut().for_each(fix);
        fix(&mut self.paths.work_dir);
        if let Some(o) = self.paths.output_dir.as_mut() {
            fix(o);
        }
        let fix_src = |s: &mut ClassifierSource| {
            for p in [&mut s.model, &mut s.positives, &mut s.negatives].into_iter().flatten() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        };
        self.quality.classifiers.iter_mut().for_each(fix_src);
        self.quality.domain.values_mut().for_each(fix_src);
    }

    pub fn work_dir(&self) -> &Path {
        &self.paths.work_dir
    }

    pub fn output_dir(&self) -> &Path {
        self.paths.output_dir.as_deref().unwrap_or(&self.paths.work_dir)
    }

    pub fn phase_dir(&self, phase: &str) -> PathBuf {
        match phase {
            "curriculum" | "prep" => self.output_dir().join(phase),
            _ => self.work_dir().join(phase),
        }
    }

    fn classifier_ids(&self) -> Vec<String> {
        self.quality
            .classifiers
            .iter()
            .enumerate()
            .map(|(i, c)| c.id.clone().unwrap_or_else(|| format!("q{i}")))
            .collect()
    }

    /// Names of every signal the quality phase will produce.
    pub fn signal_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.classifier_ids().iter().map(|id| clf_signal(id)).collect();
        names.extend([FREQ_OCCURRENCE, FREQ_SNAPSHOT, FREQ_DOMAIN].map(String::from));
        names.extend(self.quality.domain.keys().map(|t| tag_signal(t)));
        names
    }

    /// Checks every sub-configuration before any phase runs.
    pub fn validate(&self) -> Result<ValidatedPlan> {
        if self.paths.inputs.is_empty() {
            return Err(Error::Config("paths.inputs is empty".into()));
        }
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.dedup.validate()?;
        let ids = self.classifier_ids();
        let mut seen = std::collections::BTreeSet::new();
        for id in &ids {
            if !seen.insert(id) {
                return Err(Error::Config(format!("duplicate classifier id `{id}`")));
            }
        }
        for tag in REQUIRED_TAGS {
            if !self.quality.domain.contains_key(tag) {
                return Err(Error::Config(format!("quality.domain.{tag} is required")));
            }
        }
        let sources = self.quality.classifiers.iter().zip(ids.iter().cloned());
        let domains = self.quality.domain.iter().map(|(t, s)| (s, format!("domain.{t}")));
        for (src, name) in sources.chain(domains) {
            let trained = src.positives.is_some() && src.negatives.is_some();
            if src.model.is_some() == trained || (!trained && src.positives.is_some() != src.negatives.is_some()) {
                return Err(Error::Config(format!(
                    "classifier `{name}` needs either `model` or both `positives` and `negatives`"
                )));
            }
        }
        let known = self.signal_names();
        for p in &self.sampling.policies {
            if !known.contains(&p.signal) {
                return Err(Error::UnknownSignal(p.signal.clone()));
            }
        }
        mixture_weights(&self.sampling.policies)?;
        let plan = validate_plan(&self.curriculum.plan()).map_err(Error::Plan)?;
        for s in &plan.plan.stages {
            match &s.gate_signal {
                Some(g) if !known.contains(g) => return Err(Error::UnknownSignal(g.clone())),
                None if s.quality_threshold > 0.0 && ids.is_empty() => {
                    return Err(Error::Config(format!(
                        "stage {} gates on classifier scores but no classifiers are configured",
                        s.stage_id
                    )))
                }
                _ => {}
            }
            for k in s.mixture.keys().filter(|k| k.as_str() != OTHER) {
                if !self.quality.domain.contains_key(k) {
                    return Err(Error::UnknownSignal(tag_signal(k)));
                }
            }
        }
        if self.curriculum.vocab_size < 2 {
            return Err(Error::Config("curriculum.vocab_size must be >= 2".into()));
        }
        if self.prep.seq_len() == 0 {
            return Err(Error::Config("prep.seq_len must be >= 1".into()));
        }
        if let Some(lr) = &self.prep.lr {
            lr.validate()?;
        }
        Ok(plan)
    }

    /// Hash of every output-relevant setting; paths and worker count excluded.
    pub fn config_hash(&self) -> String {
        let v = serde_json::json!({
            "master_seed": self.master_seed,
            "dedup": self.dedup,
            "quality": self.quality,
            "sampling": self.sampling,
            "curriculum": self.curriculum,
            "prep": self.prep,
        });
        sha256_bytes(v.to_string().as_bytes())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PhaseOutput {
    file: String,
    sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PhaseMarker {
    phase: String,
    key: String,
    config_hash: String,
    outputs: Vec<PhaseOutput>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PhaseTiming {
    seconds: f64,
}

fn phase_key(phase: &str, section: &serde_json::Value, upstream: &str, extra: &[String]) -> String {
    let v = serde_json::json!([phase, section, upstream, extra]);
    sha256_bytes(v.to_string().as_bytes())
}

fn verify_marker(dir: &Path, marker: &PhaseMarker) -> Result<()> {
    let missing: Vec<String> = marker
        .outputs
        .iter()
        .map(|o| dir.join(&o.file))
        .filter(|p| !p.exists())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingArtifacts(missing));
    }
    for o in &marker.outputs {
        let path = dir.join(&o.file);
        let actual = sha256_file(&path)?;
        if actual != o.sha256 {
            return Err(Error::Integrity {
                path,
                reason: format!("checksum {actual} does not match recorded {}", o.sha256),
            });
        }
    }
    Ok(())
}

fn completed_marker(dir: &Path) -> Result<Option<PhaseMarker>> {
    let path = dir.join(PHASE_MARKER);
    if !path.exists() || dir.join(PARTIAL_MARKER).exists() {
        return Ok(None);
    }
    read_json(&path).map(Some)
}

/// Runs one phase unless an up-to-date, verified result already exists.
/// Returns whether the phase was skipped.
fn run_phase<F>(dir: &Path, phase: &str, key: &str, config_hash: &str, f: F) -> Result<bool>
where
    F: FnOnce(&Path) -> Result<Vec<PathBuf>>,
{
    if let Ok(Some(m)) = completed_marker(dir) {
        if m.key == key && verify_marker(dir, &m).is_ok() {
            log_line(&format!("{phase}: up to date, skipped"));
            return Ok(true);
        }
    }
    let wrap = |e: Error| Error::Phase { phase: phase.to_string(), source: Box::new(e) };
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| wrap(Error::io(dir, e)))?;
    }
    std::fs::create_dir_all(dir).map_err(|e| wrap(Error::io(dir, e)))?;
    std::fs::write(dir.join(PARTIAL_MARKER), b"").map_err(|e| wrap(Error::io(dir, e)))?;

    let started = Instant::now();
    let files = f(dir).map_err(wrap)?;
    let mut outputs = Vec::with_capacity(files.len());
    for p in files {
        let rel = p.strip_prefix(dir).unwrap_or(&p).to_string_lossy().into_owned();
        outputs.push(PhaseOutput { sha256: sha256_file(&p).map_err(wrap)?, file: rel });
    }
    outputs.sort_by(|a, b| a.file.cmp(&b.file));
    let marker = PhaseMarker {
        phase: phase.to_string(),
        key: key.to_string(),
        config_hash: config_hash.to_string(),
        outputs,
    };
    write_json(&dir.join(PHASE_MARKER), &marker).map_err(wrap)?;
    write_json(&dir.join(TIMING_FILE), &PhaseTiming { seconds: started.elapsed().as_secs_f64() })
        .map_err(wrap)?;
    std::fs::remove_file(dir.join(PARTIAL_MARKER)).map_err(|e| wrap(Error::io(dir, e)))?;
    log_line(&format!("{phase}: done in {:.2}s", started.elapsed().as_secs_f64()));
    Ok(false)
}

fn log_line(msg: &str) {
    if std::env::var_os("CURATOR_QUIET").is_none() {
        eprintln!("[curator] {msg}");
    }
}

#[derive(Deserialize)]
struct TextRow {
    text: String,
}

fn read_texts(path: &Path) -> Result<Vec<String>> {
    Ok(read_jsonl::<TextRow>(path)?.into_iter().map(|r| r.text).collect())
}

fn load_or_train(src: &ClassifierSource, id: &str, default_hyper: &Hyper) -> Result<QualityClassifier> {
    if let Some(model) = &src.model {
        let mut clf = QualityClassifier::load(model)?;
        clf.model_id = id.to_string();
        return Ok(clf);
    }
    let (pos, neg) = match (&src.positives, &src.negatives) {
        (Some(p), Some(n)) => (p, n),
        _ => return Err(Error::Config(format!("classifier `{id}` has no training data"))),
    };
    let hyper = src.hyper.clone().unwrap_or_else(|| default_hyper.clone());
    let source = pos.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    train_classifier(id, &source, &read_texts(pos)?, &read_texts(neg)?, &hyper)
}

fn source_hashes(q: &QualityConfig) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for s in q.classifiers.iter().chain(q.domain.values()) {
        for p in [&s.model, &s.positives, &s.negatives].into_iter().flatten() {
            out.push(sha256_file(p)?);
        }
    }
    Ok(out)
}

/// Sampling-phase summary stored as `sampling.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SamplingSummary {
    pub docs_in: u64,
    pub units: u64,
    pub representatives: u64,
    pub support: u64,
    pub mixture_weights: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageSummary {
    pub stage_id: String,
    pub budget: u64,
    pub eligible_docs: u64,
    pub emitted_tokens: u64,
    pub docs_emitted: u64,
    pub max_doc_tokens: u64,
    /// Token share per mixture stratum.
    pub tag_mixture: BTreeMap<String, f64>,
    pub shard_sha256: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurriculumSummary {
    pub total_token_budget: u64,
    pub stages: Vec<StageSummary>,
}

/// Text manifest written next to each packed file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PackedManifest {
    pub stage_id: String,
    pub file: String,
    pub seq_len: u32,
    pub pad_id: u32,
    pub rope_stage: RopeStage,
    pub rope_theta: f64,
    pub sequences: u64,
    pub input_tokens: u64,
    pub non_pad_tokens: u64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrepSummary {
    pub stages: Vec<PackedManifest>,
    pub lr_schedule_steps: Option<u64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub config_hash: String,
    pub input_sha256: Option<String>,
    pub ingest: Option<IngestReport>,
    pub dedup: Option<DedupStats>,
    pub quality: Option<QualityStats>,
    pub sampling: Option<SamplingSummary>,
    pub curriculum: Option<CurriculumSummary>,
    pub prep: Option<PrepSummary>,
    /// Phases without a completed result.
    pub absent: Vec<String>,
    /// Violated count-reconciliation invariants; empty when consistent.
    pub reconciliation_errors: Vec<String>,
    /// Wall-clock seconds per phase.
    pub timings: BTreeMap<String, f64>,
}

impl PipelineReport {
    /// The report with timing fields cleared, for comparisons.
    pub fn without_timings(&self) -> PipelineReport {
        PipelineReport { timings: BTreeMap::new(), ..self.clone() }
    }

    fn reconcile(&mut self) {
        let mut errs = Vec::new();
        if let Some(i) = &self.ingest {
            if i.accepted + i.rejected != i.input_lines {
                errs.push(format!(
                    "ingest: accepted {} + rejected {} != input lines {}",
                    i.accepted, i.rejected, i.input_lines
                ));
            }
        }
        if let (Some(i), Some(d)) = (&self.ingest, &self.dedup) {
            if i.accepted != d.docs_in {
                errs.push(format!("dedup in {} != ingest out {}", d.docs_in, i.accepted));
            }
        }
        if let (Some(d), Some(q)) = (&self.dedup, &self.quality) {
            if d.retained_docs != q.docs_in {
                errs.push(format!("quality in {} != dedup retained {}", q.docs_in, d.retained_docs));
            }
        }
        if let (Some(q), Some(s)) = (&self.quality, &self.sampling) {
            if q.docs_out != s.docs_in {
                errs.push(format!("sampling in {} != quality out {}", s.docs_in, q.docs_out));
            }
        }
        if let (Some(i), Some(d), Some(q), Some(s)) =
            (&self.ingest, &self.dedup, &self.quality, &self.sampling)
        {
            let avail = i.accepted as i64 - q.dropped as i64 - d.non_retained_docs as i64;
            if avail != s.docs_in as i64 {
                errs.push(format!(
                    "ingested {} - dropped {} - non-retained {} != available to sampling {}",
                    i.accepted, q.dropped, d.non_retained_docs, s.docs_in
                ));
            }
        }
        if let Some(c) = &self.curriculum {
            let sum: u64 = c.stages.iter().map(|s| s.budget).sum();
            if sum != c.total_token_budget {
                errs.push(format!("stage budgets sum to {sum}, plan total {}", c.total_token_budget));
            }
            for s in &c.stages {
                if s.emitted_tokens < s.budget
                    || (s.budget > 0 && s.emitted_tokens >= s.budget + s.max_doc_tokens)
                {
                    errs.push(format!(
                        "stage {}: emitted {} outside [{}, {})",
                        s.stage_id,
                        s.emitted_tokens,
                        s.budget,
                        s.budget + s.max_doc_tokens
                    ));
                }
            }
            if let Some(p) = &self.prep {
                for (ps, cs) in p.stages.iter().zip(&c.stages) {
                    if ps.stage_id != cs.stage_id
                        || ps.input_tokens != cs.emitted_tokens
                        || ps.non_pad_tokens != ps.input_tokens
                    {
                        errs.push(format!(
                            "prep stage {}: {} packed of {} input, curriculum emitted {}",
                            ps.stage_id, ps.non_pad_tokens, ps.input_tokens, cs.emitted_tokens
                        ));
                    }
                }
            }
        }
        self.reconciliation_errors = errs;
    }
}

const RESOLVED_CONFIG: &str = "config.json";

/// Runs every phase in order and returns the report recomputed from disk.
pub fn run(config: &PipelineConfig) -> Result<PipelineReport> {
    run_until(config, None)
}

/// Like [`run`], stopping after phase `until` when given.
pub fn run_until(config: &PipelineConfig, until: Option<&str>) -> Result<PipelineReport> {
    if let Some(u) = until {
        if !PHASES.contains(&u) {
            return Err(Error::Config(format!("unknown phase `{u}`; expected one of {}", PHASES.join(", "))));
        }
    }
    let stop = |phase: &str| until == Some(phase);
    let plan = config.validate()?;
    let cfg_hash = config.config_hash();
    let workers = config.workers;
    std::fs::create_dir_all(config.work_dir()).map_err(|e| Error::io(config.work_dir(), e))?;
    write_json(&config.work_dir().join(RESOLVED_CONFIG), config)?;

    // ingest
    let mut input_hashes = Vec::new();
    for p in &config.paths.inputs {
        input_hashes.push(sha256_file(p).map_err(|e| Error::Phase {
            phase: "ingest".into(),
            source: Box::new(e),
        })?);
    }
    let ingest_dir = config.phase_dir("ingest");
    let ingest_key = phase_key("ingest", &serde_json::Value::Null, "", &input_hashes);
    run_phase(&ingest_dir, "ingest", &ingest_key, &cfg_hash, |dir| {
        let (corpus, report) = ingest_files(&config.paths.inputs, workers)?;
        let mut files = corpus.write_dir(dir, 100_000)?;
        let rp = dir.join("ingest_report.json");
        write_json(&rp, &report)?;
        files.push(rp);
        Ok(files)
    })?;

    if stop("ingest") {
        return finish(config);
    }

    // dedup
    let dedup_dir = config.phase_dir("dedup");
    let dedup_key = phase_key("dedup", &serde_json::to_value(&config.dedup)?, &ingest_key, &[]);
    run_phase(&dedup_dir, "dedup", &dedup_key, &cfg_hash, |dir| {
        let corpus = Corpus::read(&ingest_dir)?;
        let out = dedup_corpus(&corpus, &config.dedup, workers)?;
        let cp = dir.join("clusters.jsonl");
        write_jsonl(&cp, &out.clusters)?;
        let mut files = out.corpus.write_dir(dir, 100_000)?;
        files.push(cp);
        Ok(files)
    })?;

    if stop("dedup") {
        return finish(config);
    }

    // quality
    let quality_dir = config.phase_dir("quality");
    let quality_key = phase_key(
        "quality",
        &serde_json::to_value(&config.quality)?,
        &dedup_key,
        &source_hashes(&config.quality).map_err(|e| Error::Phase {
            phase: "quality".into(),
            source: Box::new(e),
        })?,
    );
    run_phase(&quality_dir, "quality", &quality_key, &cfg_hash, |dir| {
        let q = &config.quality;
        let ids = config.classifier_ids();
        let (classifiers, domain) = crate::with_workers(workers, || -> Result<_> {
            use rayon::prelude::*;
            let classifiers = q
                .classifiers
                .par_iter()
                .zip(ids.par_iter())
                .map(|(s, id)| load_or_train(s, id, &q.hyper))
                .collect::<Result<Vec<_>>>()?;
            let domain = q
                .domain
                .par_iter()
                .map(|(t, s)| load_or_train(s, t, &q.hyper).map(|c| (t.clone(), c)))
                .collect::<Result<BTreeMap<_, _>>>()?;
            Ok((classifiers, domain))
        })??;
        let mut files = Vec::new();
        for c in &classifiers {
            let p = dir.join("models").join(format!("{}.qclf", c.model_id));
            c.save(&p)?;
            files.push(p);
        }
        for (t, c) in &domain {
            let p = dir.join("models").join(format!("domain-{t}.qclf"));
            c.save(&p)?;
            files.push(p);
        }
        let corpus = Corpus::read(&dedup_dir)?;
        let clusters: Vec<DuplicateCluster> = read_jsonl(&dedup_dir.join("clusters.jsonl"))?;
        let acfg = AnnotateConfig { heuristics: q.heuristics.clone(), tag_threshold: q.tag_threshold };
        let out = crate::with_workers(workers, || {
            annotate(&corpus, &clusters, &classifiers, &domain, &acfg)
        })??;
        let ap = dir.join("annotated.jsonl");
        write_jsonl(&ap, &out.docs)?;
        let dp = dir.join("drops.jsonl");
        write_jsonl(&dp, &out.drops)?;
        files.extend([ap, dp]);
        Ok(files)
    })?;

    if stop("quality") {
        return finish(config);
    }

    // sample
    let sample_dir = config.phase_dir("sample");
    let sample_key = phase_key(
        "sample",
        &serde_json::json!([config.sampling, config.master_seed]),
        &quality_key,
        &[],
    );
    run_phase(&sample_dir, "sample", &sample_key, &cfg_hash, |dir| {
        let docs: Vec<AnnotatedDoc> = read_jsonl(&quality_dir.join("annotated.jsonl"))?;
        let clusters: Vec<DuplicateCluster> = read_jsonl(&dedup_dir.join("clusters.jsonl"))?;
        let units = sampling_units(&clusters, &docs);
        let reps = representatives(&units, &docs);
        let (maps, merged) = build_distribution(&reps, &config.sampling.policies)?;
        let wp = dir.join("weights.jsonl");
        write_jsonl(&wp, &weight_records(&maps, &merged))?;
        let up = dir.join("units.jsonl");
        write_jsonl(&up, &units)?;
        let sp = dir.join("sampling.json");
        write_json(
            &sp,
            &SamplingSummary {
                docs_in: docs.len() as u64,
                units: units.len() as u64,
                representatives: reps.len() as u64,
                support: merged.probabilities.iter().filter(|(_, p)| *p > 0.0).count() as u64,
                mixture_weights: merged.mixture_weights.clone(),
            },
        )?;
        let mut files = vec![wp, up, sp];
        if config.sampling.draws > 0 {
            let seed = stage_seed(config.master_seed, "sample");
            let drawn = draw(&merged, &units, seed, config.sampling.draws)?;
            let p = dir.join("draws.jsonl");
            write_jsonl(&p, &drawn)?;
            files.push(p);
        }
        Ok(files)
    })?;

    if stop("sample") {
        return finish(config);
    }

    // curriculum
    let curriculum_dir = config.phase_dir("curriculum");
    let curriculum_key = phase_key(
        "curriculum",
        &serde_json::json!([config.curriculum, config.master_seed]),
        &sample_key,
        &[],
    );
    run_phase(&curriculum_dir, "curriculum", &curriculum_key, &cfg_hash, |dir| {
        let docs: Vec<AnnotatedDoc> = read_jsonl(&quality_dir.join("annotated.jsonl"))?;
        let units: Vec<DuplicateCluster> = read_jsonl(&sample_dir.join("units.jsonl"))?;
        let dist = load_distribution(&sample_dir)?;
        let reps = representatives(&units, &docs);
        let tokenizer = WhitespaceTokenizer { vocab_size: config.curriculum.vocab_size };
        let ctx = EmitContext {
            units: &units,
            docs: &docs,
            tokenizer: &tokenizer,
            shard_tokens: config.curriculum.shard_tokens,
        };
        let pp = dir.join("plan.json");
        write_json(&pp, &plan)?;
        let mut files = vec![pp];
        for (stage, &budget) in plan.plan.stages.iter().zip(&plan.budgets) {
            let eligible = stage_eligible(&reps, stage)?;
            let seed = stage_seed(config.master_seed, &stage.stage_id);
            let m = emit_stage(stage, budget, &eligible, &dist, &ctx, seed, dir)?;
            files.extend(m.shards.iter().map(|s| dir.join(&s.file)));
            files.push(dir.join(ShardManifest::file_name(&stage.stage_id)));
        }
        Ok(files)
    })?;

    if stop("curriculum") {
        return finish(config);
    }

    // prep
    let prep_dir = config.phase_dir("prep");
    let prep_key = phase_key("prep", &serde_json::to_value(&config.prep)?, &curriculum_key, &[]);
    run_phase(&prep_dir, "prep", &prep_key, &cfg_hash, |dir| {
        let plan: ValidatedPlan = read_validated_plan(&curriculum_dir)?;
        let seq_len = config.prep.seq_len();
        let rope = rope_config(config.prep.rope_stage);
        let mut files = Vec::new();
        for stage in &plan.plan.stages {
            let m: ShardManifest =
                read_json(&curriculum_dir.join(ShardManifest::file_name(&stage.stage_id)))?;
            let mut docs = Vec::new();
            for s in &m.shards {
                for r in read_jsonl::<ShardRecord>(&curriculum_dir.join(&s.file))? {
                    docs.push((r.doc_id, r.token_ids));
                }
            }
            let input_tokens: u64 = docs.iter().map(|(_, t)| t.len() as u64).sum();
            let seqs = pack_documents(&docs, seq_len as usize, config.prep.pad_id)?;
            let name = format!("stage-{}.packed", stage.stage_id);
            let path = dir.join(&name);
            write_packed_file(&path, &seqs, seq_len, config.prep.pad_id)?;
            let manifest = PackedManifest {
                stage_id: stage.stage_id.clone(),
                file: name,
                seq_len,
                pad_id: config.prep.pad_id,
                rope_stage: rope.stage,
                rope_theta: rope.theta,
                sequences: seqs.len() as u64,
                input_tokens,
                non_pad_tokens: seqs.iter().map(|s| u64::from(s.pad_from)).sum(),
                sha256: sha256_file(&path)?,
            };
            let mp = dir.join(format!("stage-{}.packed.json", stage.stage_id));
            write_json(&mp, &manifest)?;
            files.extend([path, mp]);
        }
        if let Some(lr) = &config.prep.lr {
            let p = dir.join("lr.csv");
            std::fs::write(&p, lr_csv(lr)?).map_err(|e| Error::io(&p, e))?;
            files.push(p);
        }
        Ok(files)
    })?;

    finish(config)
}

fn finish(config: &PipelineConfig) -> Result<PipelineReport> {
    let report = report(config.work_dir())?;
    write_json(&config.work_dir().join("report.json"), &report)?;
    Ok(report)
}

/// `step,lr` rows for every step of the schedule.
pub fn lr_csv(spec: &LrScheduleSpec) -> Result<String> {
    spec.validate()?;
    let mut out = String::from("step,lr\n");
    for step in 0..=spec.end {
        out.push_str(&format!("{step},{:e}\n", lr_at(step, spec)?));
    }
    Ok(out)
}

fn read_validated_plan(dir: &Path) -> Result<ValidatedPlan> {
    #[derive(Deserialize)]
    struct Stored {
        plan: StagePlan,
        budgets: Vec<u64>,
    }
    let s: Stored = read_json(&dir.join("plan.json"))?;
    Ok(ValidatedPlan { plan: s.plan, budgets: s.budgets })
}

/// Rebuilds the merged distribution from a sample-phase directory.
pub fn load_distribution(sample_dir: &Path) -> Result<MergedDistribution> {
    let records: Vec<WeightRecord> = read_jsonl(&sample_dir.join("weights.jsonl"))?;
    let summary: SamplingSummary = read_json(&sample_dir.join("sampling.json"))?;
    Ok(MergedDistribution {
        probabilities: records.into_iter().map(|r| (r.doc_id, r.probability)).collect(),
        mixture_weights: summary.mixture_weights,
    })
}

fn load_phase(dir: &Path) -> Result<Option<f64>> {
    match completed_marker(dir)? {
        Some(m) => {
            verify_marker(dir, &m)?;
            let t = read_json::<PhaseTiming>(&dir.join(TIMING_FILE)).map(|t| t.seconds).ok();
            Ok(Some(t.unwrap_or(0.0)))
        }
        None => Ok(None),
    }
}

/// Recomputes the pipeline report from on-disk artifacts only.
pub fn report(work_dir: &Path) -> Result<PipelineReport> {
    let cfg_path = work_dir.join(RESOLVED_CONFIG);
    if !cfg_path.exists() {
        return Err(Error::MissingArtifacts(vec![cfg_path.display().to_string()]));
    }
    let config: PipelineConfig = read_json(&cfg_path)?;
    let mut r = PipelineReport { config_hash: config.config_hash(), ..Default::default() };
    let mut done = BTreeMap::new();
    for phase in PHASES {
        match load_phase(&config.phase_dir(phase))? {
            Some(t) => {
                r.timings.insert(phase.to_string(), t);
                done.insert(phase, ());
            }
            None => r.absent.push(phase.to_string()),
        }
    }
    if done.is_empty() {
        return Err(Error::MissingArtifacts(
            PHASES.iter().map(|p| config.phase_dir(p).join(PHASE_MARKER).display().to_string()).collect(),
        ));
    }
    if done.contains_key("ingest") {
        let dir = config.phase_dir("ingest");
        r.ingest = Some(read_json(&dir.join("ingest_report.json"))?);
        let prov: BTreeMap<String, String> = read_json(&dir.join("provenance.json"))?;
        r.input_sha256 = prov.get("input_sha256").cloned();
    }
    if done.contains_key("dedup") {
        let clusters: Vec<DuplicateCluster> =
            read_jsonl(&config.phase_dir("dedup").join("clusters.jsonl"))?;
        r.dedup = Some(DedupStats::of(&clusters));
    }
    if done.contains_key("quality") {
        let dir = config.phase_dir("quality");
        let docs: Vec<AnnotatedDoc> = read_jsonl(&dir.join("annotated.jsonl"))?;
        let drops: Vec<DropRecord> = read_jsonl(&dir.join("drops.jsonl"))?;
        r.quality = Some(QualityStats::of(&docs, &drops));
    }
    if done.contains_key("sample") {
        r.sampling = Some(read_json(&config.phase_dir("sample").join("sampling.json"))?);
    }
    if done.contains_key("curriculum") {
        let dir = config.phase_dir("curriculum");
        let plan = read_validated_plan(&dir)?;
        let mut stages = Vec::new();
        for (stage, &budget) in plan.plan.stages.iter().zip(&plan.budgets) {
            let m: ShardManifest = read_json(&dir.join(ShardManifest::file_name(&stage.stage_id)))?;
            m.verify(&dir)?;
            let total = m.total_tokens.max(1) as f64;
            stages.push(StageSummary {
                stage_id: m.stage_id.clone(),
                budget,
                eligible_docs: m.eligible_docs,
                emitted_tokens: m.total_tokens,
                docs_emitted: m.docs_emitted,
                max_doc_tokens: m.max_doc_tokens,
                tag_mixture: m.stratum_tokens.iter().map(|(k, &v)| (k.clone(), v as f64 / total)).collect(),
                shard_sha256: m.shards.iter().map(|s| s.sha256.clone()).collect(),
            });
        }
        r.curriculum = Some(CurriculumSummary { total_token_budget: plan.plan.total_token_budget, stages });
    }
    if done.contains_key("prep") {
        let dir = config.phase_dir("prep");
        let mut stages = Vec::new();
        for stage in &config.curriculum.stages {
            stages.push(read_json(&dir.join(format!("stage-{}.packed.json", stage.stage_id)))?);
        }
        let lr_steps = config.prep.lr.map(|l| l.end + 1);
        r.prep = Some(PrepSummary { stages, lr_schedule_steps: lr_steps });
    }
    r.reconcile();
    Ok(r)
}
