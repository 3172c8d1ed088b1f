//! Synthetic web-dump generator with planted duplicates.
//!
//! Produces records in the ingest format plus labelled reference sets for
//! training quality and domain classifiers. Every output is a pure function
//! of the configuration and seed.

use std::collections::BTreeMap;
use std::path::Path;

use chrono::{Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{make_doc_id, ContentHash, Document};
use crate::dedup::shingle;
use crate::error::Result;
use crate::quality::{AnnotatedDoc, QualitySignalVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Total number of records, duplicates included.
    pub docs: usize,
    pub near_dup_pairs: usize,
    pub exact_triples: usize,
    /// Fraction of base documents made to fail the heuristics.
    pub low_quality_rate: f64,
    pub snapshots: usize,
    pub domains: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            docs: 1000,
            near_dup_pairs: 50,
            exact_triples: 20,
            low_quality_rate: 0.03,
            snapshots: 6,
            domains: 200,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Topic {
    Prose,
    Code,
    Math,
}

/// One generated input record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthRecord {
    pub url: String,
    pub text: String,
    pub crawl_time: String,
    pub snapshot_id: String,
    pub language: String,
}

#[derive(Debug, Clone)]
pub struct SynthCorpus {
    pub records: Vec<SynthRecord>,
    pub topics: Vec<Topic>,
    /// Record indices of planted near-duplicate pairs.
    pub near_pairs: Vec<(usize, usize)>,
    /// Record indices of planted exact-duplicate triples.
    pub exact_triples: Vec<[usize; 3]>,
}

impl SynthCorpus {
    pub fn to_lines(&self) -> Vec<Vec<u8>> {
        self.records
            .iter()
            .map(|r| serde_json::to_vec(r).expect("record serializes"))
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        crate::io::write_jsonl(path, &self.records)
    }
}

const SYLLABLES: [&[&str]; 5] = [
    &["ka", "lo", "mi", "ne", "ru", "sa", "ti", "vo", "be", "da", "fe", "gu", "ho", "ji", "pe", "zu"],
    &["to", "ve", "pl", "de", "mo", "qu", "si", "la", "ba", "ca", "re", "po"],
    &["ax", "io", "eq", "uv", "ra", "th", "op", "ma", "ix", "or", "ca", "ve"],
    &["cl", "so", "pr", "wi", "tr", "de", "fa", "no", "ke", "we"],
    &["bu", "cl", "wi", "ch", "ho", "de", "fr", "sp", "wo", "pr"],
];

fn vocab(rng: &mut ChaCha8Rng, syllables: &[&str], size: usize, suffix: &str) -> Vec<String> {
    let mut words = std::collections::BTreeSet::new();
    while words.len() < size {
        let n = rng.gen_range(2..=3);
        let mut w: String = (0..n).map(|_| *syllables.choose(rng).expect("syllables")).collect();
        w.push_str(suffix);
        words.insert(w);
    }
    let mut v: Vec<String> = words.into_iter().collect();
    v.shuffle(rng);
    v
}

/// Word pools shared by the corpus and the reference sets.
struct Vocab {
    prose: Vec<String>,
    code: Vec<String>,
    math: Vec<String>,
    good: Vec<String>,
    junk: Vec<String>,
}

impl Vocab {
    fn new() -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(0x00c0_ffee);
        Vocab {
            prose: vocab(&mut rng, SYLLABLES[0], 3000, ""),
            code: vocab(&mut rng, SYLLABLES[1], 1200, "x"),
            math: vocab(&mut rng, SYLLABLES[2], 1200, "q"),
            good: vocab(&mut rng, SYLLABLES[3], 600, "y"),
            junk: vocab(&mut rng, SYLLABLES[4], 600, "z"),
        }
    }

    fn topic(&self, t: Topic) -> &[String] {
        match t {
            Topic::Prose => &self.prose,
            Topic::Code => &self.code,
            Topic::Math => &self.math,
        }
    }

    /// Half topic words, half style words; style is good with probability `q`.
    fn text(&self, rng: &mut ChaCha8Rng, topic: Topic, q: f64, words: usize) -> String {
        let mut out = String::new();
        for i in 0..words {
            let pool = if rng.gen_bool(0.5) {
                self.topic(topic)
            } else if rng.gen_bool(q) {
                &self.good
            } else {
                &self.junk
            };
            if i > 0 {
                out.push(if i % 14 == 0 { '\n' } else { ' ' });
            }
            out.push_str(pool.choose(rng).expect("non-empty pool"));
        }
        out
    }
}

fn pick_topic(rng: &mut ChaCha8Rng) -> Topic {
    match rng.gen_range(0..100) {
        0..=59 => Topic::Prose,
        60..=84 => Topic::Code,
        _ => Topic::Math,
    }
}

fn meta(rng: &mut ChaCha8Rng, cfg: &SynthConfig, n: usize) -> (String, String, String) {
    let snap = rng.gen_range(0..cfg.snapshots.max(1));
    let domain = rng.gen_range(0..cfg.domains.max(1));
    let base = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
    let t = base + Duration::days(30 * snap as i64) + Duration::seconds(rng.gen_range(0..86_400));
    (
        format!("https://site{domain}.example/page/{n}"),
        t.format("%Y-%m-%dT%H:%M:%SZ").to_string(),
        format!("CC-2023-{snap:02}"),
    )
}

fn low_quality(rng: &mut ChaCha8Rng, v: &Vocab) -> String {
    if rng.gen_bool(0.5) {
        let n = rng.gen_range(3..15);
        v.text(rng, Topic::Prose, 0.5, n)
    } else {
        let line = v.text(rng, Topic::Prose, 0.5, 8).replace('\n', " ");
        vec![line; rng.gen_range(20..40)].join("\n")
    }
}

/// Replaces up to `edits` words, keeping 5-shingle Jaccard at or above 0.8.
fn near_duplicate(rng: &mut ChaCha8Rng, v: &Vocab, text: &str) -> String {
    let base = shingle(text, 5);
    for edits in (1..=3).rev() {
        let mut words: Vec<String> = text.split(' ').map(str::to_string).collect();
        for _ in 0..edits {
            let i = rng.gen_range(0..words.len());
            let nl = words[i].contains('\n');
            let mut w = v.prose.choose(rng).expect("prose").clone();
            if nl {
                w = format!("{w}\n{}", v.prose.choose(rng).expect("prose"));
            }
            words[i] = w;
        }
        let out = words.join(" ");
        if shingle(&out, 5).jaccard(&base) >= 0.8 && out != text {
            return out;
        }
    }
    format!("{text} {}", v.prose.choose(rng).expect("prose"))
}

/// Generates a corpus with planted near-duplicate pairs and exact triples.
pub fn generate(cfg: &SynthConfig) -> SynthCorpus {
    let v = Vocab::new();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let extra = cfg.near_dup_pairs + 2 * cfg.exact_triples;
    let base_n = cfg.docs.saturating_sub(extra);

    let mut texts: Vec<(String, Topic)> = Vec::with_capacity(cfg.docs);
    for _ in 0..base_n {
        let topic = pick_topic(&mut rng);
        let text = if rng.gen_bool(cfg.low_quality_rate.clamp(0.0, 1.0)) {
            low_quality(&mut rng, &v)
        } else {
            let q = rng.gen::<f64>();
            let n = rng.gen_range(120..400);
            v.text(&mut rng, topic, q, n)
        };
        texts.push((text, topic));
    }

    // Planted duplicates draw from distinct, long base documents.
    let mut sources: Vec<usize> = (0..base_n).filter(|&i| texts[i].0.split_whitespace().count() >= 100).collect();
    sources.shuffle(&mut rng);
    let mut sources = sources.into_iter();
    let mut near_pairs = Vec::new();
    for _ in 0..cfg.near_dup_pairs {
        let Some(src) = sources.next() else { break };
        let dup = near_duplicate(&mut rng, &v, &texts[src].0);
        let topic = texts[src].1;
        texts.push((dup, topic));
        near_pairs.push((src, texts.len() - 1));
    }
    let mut exact_triples = Vec::new();
    for _ in 0..cfg.exact_triples {
        let Some(src) = sources.next() else { break };
        let (t, topic) = texts[src].clone();
        texts.push((t.clone(), topic));
        texts.push((t, topic));
        exact_triples.push([src, texts.len() - 2, texts.len() - 1]);
    }

    let mut topics = Vec::with_capacity(texts.len());
    let records = texts
        .into_iter()
        .enumerate()
        .map(|(n, (text, topic))| {
            topics.push(topic);
            let (url, crawl_time, snapshot_id) = meta(&mut rng, cfg, n);
            SynthRecord { url, text, crawl_time, snapshot_id, language: "en".into() }
        })
        .collect();
    SynthCorpus { records, topics, near_pairs, exact_triples }
}

/// Labelled texts for classifier training.
#[derive(Debug, Clone, Default)]
pub struct ReferenceSets {
    /// Source name to (positives, negatives).
    pub quality: BTreeMap<String, (Vec<String>, Vec<String>)>,
    pub domain: BTreeMap<String, (Vec<String>, Vec<String>)>,
}

pub fn reference_sets(seed: u64, per_class: usize) -> ReferenceSets {
    let v = Vocab::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5151_5151);
    let gen = |topic: Option<Topic>, q: f64, rng: &mut ChaCha8Rng| -> String {
        let topic = topic.unwrap_or_else(|| pick_topic(rng));
        let n = rng.gen_range(80..200);
        v.text(rng, topic, q, n)
    };
    let mut sets = ReferenceSets::default();
    for (name, hi) in [("ref-a", 1.0), ("ref-b", 0.9)] {
        let pos = (0..per_class).map(|_| gen(None, hi, &mut rng)).collect();
        let neg = (0..per_class).map(|_| gen(None, 0.0, &mut rng)).collect();
        sets.quality.insert(name.to_string(), (pos, neg));
    }
    for (tag, topic, others) in [
        ("code", Topic::Code, [Topic::Prose, Topic::Math]),
        ("math", Topic::Math, [Topic::Prose, Topic::Code]),
    ] {
        let pos = (0..per_class).map(|_| { let q = rng.gen(); gen(Some(topic), q, &mut rng) }).collect();
        let neg = (0..per_class)
            .map(|i| { let q = rng.gen(); gen(Some(others[i % 2]), q, &mut rng) })
            .collect();
        sets.domain.insert(tag.to_string(), (pos, neg));
    }
    sets
}

/// Writes each reference set as `<dir>/<kind>-<name>-{pos,neg}.jsonl` with
/// one `{"text": ...}` object per line.
pub fn write_reference_sets(sets: &ReferenceSets, dir: &Path) -> Result<()> {
    #[derive(Serialize)]
    struct T<'a> {
        text: &'a str,
    }
    for (kind, group) in [("quality", &sets.quality), ("domain", &sets.domain)] {
        for (name, (pos, neg)) in group {
            for (suffix, texts) in [("pos", pos), ("neg", neg)] {
                let rows: Vec<T> = texts.iter().map(|t| T { text: t }).collect();
                crate::io::write_jsonl(&dir.join(format!("{kind}-{name}-{suffix}.jsonl")), &rows)?;
            }
        }
    }
    Ok(())
}

/// Small annotated document with the given signals, for tests and examples.
pub fn annotated_fixture(doc_id: &str, signals: &[(&str, f64)]) -> AnnotatedDoc {
    let t = Utc.with_ymd_and_hms(2024, 1, 1, 0, 0, 0).unwrap();
    let text = format!("fixture text for {doc_id}");
    let h = ContentHash::of(&text);
    let mut doc = Document {
        doc_id: make_doc_id(h, doc_id, &t),
        url: format!("https://fixture.example/{doc_id}"),
        crawl_time: t,
        language: "en".into(),
        snapshot_id: "S1".into(),
        domain: "fixture.example".into(),
        content_hash: h,
        text,
        extra: Default::default(),
    };
    doc.doc_id = doc_id.to_string();
    AnnotatedDoc {
        doc,
        signals: QualitySignalVector(signals.iter().map(|(k, v)| (k.to_string(), *v)).collect()),
    }
}

/// Writes a ready-to-run pipeline workspace under `dir`: `dump.jsonl`,
/// reference sets in `refs/`, and `pipeline.toml` with a four-stage plan of
/// `total_tokens`. Returns the config path.
pub fn write_workspace(dir: &Path, cfg: &SynthConfig, refs_per_class: usize, total_tokens: u64) -> Result<std::path::PathBuf> {
    generate(cfg).write(&dir.join("dump.jsonl"))?;
    write_reference_sets(&reference_sets(cfg.seed, refs_per_class), &dir.join("refs"))?;
    let plan = crate::curriculum::StagePlan::four_stage(total_tokens);
    let mut toml = format!(
        r#"master_seed = {seed}
workers = 1

[paths]
inputs = ["dump.jsonl"]
work_dir = "work"

[[quality.classifiers]]
id = "ref-a"
positives = "refs/quality-ref-a-pos.jsonl"
negatives = "refs/quality-ref-a-neg.jsonl"

[[quality.classifiers]]
id = "ref-b"
positives = "refs/quality-ref-b-pos.jsonl"
negatives = "refs/quality-ref-b-neg.jsonl"

[quality.domain.code]
positives = "refs/domain-code-pos.jsonl"
negatives = "refs/domain-code-neg.jsonl"

[quality.domain.math]
positives = "refs/domain-math-pos.jsonl"
negatives = "refs/domain-math-neg.jsonl"

[[sampling.policies]]
signal = "freq:occurrence"
transform = {{ kind = "log2_sublinear", cap = 6.0 }}
lambda = 0.5

[[sampling.policies]]
signal = "clf:ref-a"
transform = {{ kind = "identity" }}
lambda = 0.5

[curriculum]
total_token_budget = {total_tokens}
shard_tokens = 262144
"#,
        seed = cfg.seed
    );
    for s in &plan.stages {
        let mix: Vec<String> = s.mixture.iter().map(|(k, v)| format!("{k} = {v:?}")).collect();
        toml.push_str(&format!(
            "\n[[curriculum.stages]]\nstage_id = \"{}\"\ndescription = \"{}\"\ntoken_share = {:?}\nquality_threshold = {:?}\nmixture = {{ {} }}\n",
            s.stage_id,
            s.description,
            s.token_share,
            s.quality_threshold,
            mix.join(", ")
        ));
    }
    toml.push_str(
        "\n[prep]\nrope_stage = \"pretrain\"\n\n[prep.lr]\npeak_lr = 3e-4\nwarmup_end = 100\nconstant_end = 600\nslow_decay_end = 900\nslow_decay_lr = 1e-4\nend = 1000\nfinal_lr = 0.0\n",
    );
    let path = dir.join("pipeline.toml");
    std::fs::write(&path, toml).map_err(|e| crate::Error::io(&path, e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn counts_and_determinism() {
        let cfg = SynthConfig::default();
        let a = generate(&cfg);
        assert_eq!(a.records.len(), 1000);
        assert_eq!(a.near_pairs.len(), 50);
        assert_eq!(a.exact_triples.len(), 20);
        let b = generate(&cfg);
        assert_eq!(a.records, b.records);
    }

    #[test]
    fn planted_pairs_meet_threshold() {
        let c = generate(&SynthConfig::default());
        for &(a, b) in &c.near_pairs {
            let j = shingle(&c.records[a].text, 5).jaccard(&shingle(&c.records[b].text, 5));
            assert!((0.8..1.0).contains(&j), "pair {a},{b}: {j}");
        }
        for t in &c.exact_triples {
            assert_eq!(c.records[t[0]].text, c.records[t[2]].text);
        }
    }
}
