//! Document model and ingestion into the raw-prepared layer.
//!
//! Every document keeps only essential metadata: source URL, crawl time,
//! language tag, snapshot, registrable domain and a content hash. Downstream
//! phases attach their annotations to [`Document::extra`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDateTime, Timelike, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use unicode_normalization::UnicodeNormalization;
use xxhash_rust::xxh3::{xxh3_128, xxh3_64};

use crate::error::{Error, Result};
use crate::io;

/// 128-bit hash of normalized document text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ContentHash(pub u128);

impl ContentHash {
    pub fn of(normalized: &str) -> Self {
        ContentHash(xxh3_128(normalized.as_bytes()))
    }
}

impl fmt::Display for ContentHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:032x}", self.0)
    }
}

impl Serialize for ContentHash {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ContentHash {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        u128::from_str_radix(&s, 16)
            .map(ContentHash)
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub url: String,
    pub crawl_time: DateTime<Utc>,
    pub language: String,
    pub snapshot_id: String,
    pub domain: String,
    pub content_hash: ContentHash,
    pub text: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, String>,
}

/// An ordered collection of documents, ascending by `doc_id`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    documents: Vec<Document>,
    pub provenance: BTreeMap<String, String>,
}

impl Corpus {
    pub fn from_documents(mut documents: Vec<Document>) -> Self {
        documents.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        Corpus { documents, provenance: BTreeMap::new() }
    }

    pub fn documents(&self) -> &[Document] {
        &self.documents
    }

    pub fn documents_mut(&mut self) -> &mut [Document] {
        &mut self.documents
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn get(&self, doc_id: &str) -> Option<&Document> {
        self.index_of(doc_id).map(|i| &self.documents[i])
    }

    pub fn index_of(&self, doc_id: &str) -> Option<usize> {
        self.documents
            .binary_search_by(|d| d.doc_id.as_str().cmp(doc_id))
            .ok()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Document> {
        self.documents.iter()
    }

    /// Writes `corpus-NNNNN.jsonl` shards plus `provenance.json` into `dir`.
    pub fn write_dir(&self, dir: &Path, shard_size: usize) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let shard_size = shard_size.max(1);
        let mut paths = Vec::new();
        for (i, chunk) in self.documents.chunks(shard_size).enumerate() {
            let path = dir.join(format!("corpus-{i:05}.jsonl"));
            io::write_jsonl(&path, chunk)?;
            paths.push(path);
        }
        if self.documents.is_empty() {
            let path = dir.join("corpus-00000.jsonl");
            io::write_jsonl::<Document, _>(&path, [])?;
            paths.push(path);
        }
        let prov = dir.join("provenance.json");
        io::write_json(&prov, &self.provenance)?;
        paths.push(prov);
        Ok(paths)
    }

    /// Reads a corpus from a directory of shards or from a single shard file.
    pub fn read(path: &Path) -> Result<Self> {
        let mut docs = Vec::new();
        let mut provenance = BTreeMap::new();
        if path.is_dir() {
            for shard in shard_files(path, "corpus-")? {
                docs.extend(io::read_jsonl::<Document>(&shard)?);
            }
            let prov = path.join("provenance.json");
            if prov.exists() {
                provenance = io::read_json(&prov)?;
            }
        } else {
            docs = io::read_jsonl(path)?;
        }
        let mut corpus = Corpus::from_documents(docs);
        corpus.provenance = provenance;
        Ok(corpus)
    }
}

impl<'a> IntoIterator for &'a Corpus {
    type Item = &'a Document;
    type IntoIter = std::slice::Iter<'a, Document>;
    fn into_iter(self) -> Self::IntoIter {
        self.documents.iter()
    }
}

/// Sorted list of `<prefix>*.jsonl` files in `dir`.
pub(crate) fn shard_files(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        if name.starts_with(prefix) && name.ends_with(".jsonl") {
            out.push(entry.path());
        }
    }
    out.sort();
    Ok(out)
}

/// Why an input record was rejected at ingest.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum RejectReason {
    #[error("invalid UTF-8 at byte offset {offset}")]
    InvalidUtf8 { offset: usize },
    #[error("unparseable record: {0}")]
    Parse(String),
    #[error("missing required field `{0}`")]
    MissingField(&'static str),
    #[error("bad url `{0}`")]
    BadUrl(String),
    #[error("bad crawl_time `{0}`")]
    BadTimestamp(String),
    #[error("text is empty after normalization")]
    EmptyText,
    #[error("duplicate doc_id `{0}`")]
    DuplicateId(String),
}

impl RejectReason {
    /// Stable bucket name used in ingest reports.
    pub fn kind(&self) -> &'static str {
        match self {
            RejectReason::InvalidUtf8 { .. } => "invalid_utf8",
            RejectReason::Parse(_) => "parse_error",
            RejectReason::MissingField(f) => match *f {
                "url" => "missing_url",
                "text" => "missing_text",
                "crawl_time" => "missing_crawl_time",
                _ => "missing_snapshot_id",
            },
            RejectReason::BadUrl(_) => "bad_url",
            RejectReason::BadTimestamp(_) => "bad_crawl_time",
            RejectReason::EmptyText => "empty_text",
            RejectReason::DuplicateId(_) => "duplicate_doc_id",
        }
    }
}

/// NFC, CRLF to LF, collapse runs of more than two blank lines, trim.
pub fn normalize_text(raw: &str) -> String {
    let nfc: String = raw.nfc().collect();
    let mut out = String::with_capacity(nfc.len());
    let mut blank_run = 0usize;
    for (i, line) in nfc.split('\n').enumerate() {
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            blank_run += 1;
            if blank_run > 2 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        if i > 0 {
            out.push('\n');
        }
        out.push_str(line);
    }
    out.trim().to_string()
}

/// [`normalize_text`] over raw bytes, rejecting invalid UTF-8.
pub fn normalize_bytes(raw: &[u8]) -> std::result::Result<String, RejectReason> {
    std::str::from_utf8(raw)
        .map(normalize_text)
        .map_err(|e| RejectReason::InvalidUtf8 { offset: e.valid_up_to() })
}

/// Host of `url` with a leading `www.` removed.
pub fn extract_domain(url: &str) -> std::result::Result<String, RejectReason> {
    let parsed = url::Url::parse(url).map_err(|_| RejectReason::BadUrl(url.to_string()))?;
    let host = parsed
        .host_str()
        .filter(|h| !h.is_empty())
        .ok_or_else(|| RejectReason::BadUrl(url.to_string()))?
        .to_ascii_lowercase();
    Ok(host.strip_prefix("www.").map(str::to_string).unwrap_or(host))
}

fn parse_crawl_time(raw: &str) -> std::result::Result<DateTime<Utc>, RejectReason> {
    let parsed = DateTime::parse_from_rfc3339(raw)
        .map(|t| t.with_timezone(&Utc))
        .or_else(|_| {
            NaiveDateTime::parse_from_str(raw, "%Y-%m-%dT%H:%M:%S").map(|n| n.and_utc())
        })
        .map_err(|_| RejectReason::BadTimestamp(raw.to_string()))?;
    Ok(parsed.with_nanosecond(0).unwrap_or(parsed))
}

#[derive(Deserialize)]
struct RawRecord {
    url: Option<String>,
    text: Option<String>,
    crawl_time: Option<String>,
    #[serde(alias = "snapshot")]
    snapshot_id: Option<String>,
    language: Option<String>,
}

/// Identifier: hex content hash, then a 64-bit hash of (url, crawl_time).
pub fn make_doc_id(content_hash: ContentHash, url: &str, crawl_time: &DateTime<Utc>) -> String {
    let mut key = Vec::with_capacity(url.len() + 32);
    key.extend_from_slice(url.as_bytes());
    key.push(0);
    key.extend_from_slice(crawl_time.timestamp().to_le_bytes().as_slice());
    format!("{content_hash}-{:016x}", xxh3_64(&key))
}

/// Parses one input line into a [`Document`].
pub fn ingest_record(line: &[u8]) -> std::result::Result<Document, RejectReason> {
    let line = std::str::from_utf8(line)
        .map_err(|e| RejectReason::InvalidUtf8 { offset: e.valid_up_to() })?;
    let raw: RawRecord =
        serde_json::from_str(line).map_err(|e| RejectReason::Parse(e.to_string()))?;
    let url = raw.url.ok_or(RejectReason::MissingField("url"))?;
    let text = raw.text.ok_or(RejectReason::MissingField("text"))?;
    let crawl_time = raw.crawl_time.ok_or(RejectReason::MissingField("crawl_time"))?;
    let snapshot_id = raw.snapshot_id.ok_or(RejectReason::MissingField("snapshot_id"))?;

    let text = normalize_text(&text);
    if text.is_empty() {
        return Err(RejectReason::EmptyText);
    }
    let domain = extract_domain(&url)?;
    let crawl_time = parse_crawl_time(&crawl_time)?;
    let content_hash = ContentHash::of(&text);
    Ok(Document {
        doc_id: make_doc_id(content_hash, &url, &crawl_time),
        url,
        crawl_time,
        language: raw.language.filter(|l| !l.is_empty()).unwrap_or_else(|| "und".into()),
        snapshot_id,
        domain,
        content_hash,
        text,
        extra: BTreeMap::new(),
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub input_lines: u64,
    pub accepted: u64,
    pub rejected: u64,
    pub rejects_by_reason: BTreeMap<String, u64>,
}

/// Ingests a whole line-delimited input. Output does not depend on `workers`.
pub fn ingest_lines(lines: &[Vec<u8>], workers: usize) -> Result<(Corpus, IngestReport)> {
    let parsed: Vec<(usize, std::result::Result<Document, RejectReason>)> =
        crate::with_workers(workers, || {
            lines
                .par_iter()
                .enumerate()
                .map(|(i, l)| (i, ingest_record(l)))
                .collect()
        })?;

    let mut report = IngestReport { input_lines: lines.len() as u64, ..Default::default() };
    let mut accepted = Vec::with_capacity(parsed.len());
    for (idx, res) in parsed {
        match res {
            Ok(doc) => accepted.push((idx, doc)),
            Err(reason) => report.reject(&reason),
        }
    }
    accepted.sort_by(|a, b| a.1.doc_id.cmp(&b.1.doc_id).then(a.0.cmp(&b.0)));
    let mut docs: Vec<Document> = Vec::with_capacity(accepted.len());
    for (_, doc) in accepted {
        if docs.last().is_some_and(|prev| prev.doc_id == doc.doc_id) {
            report.reject(&RejectReason::DuplicateId(doc.doc_id));
            continue;
        }
        docs.push(doc);
    }
    report.accepted = docs.len() as u64;
    Ok((Corpus::from_documents(docs), report))
}

impl IngestReport {
    fn reject(&mut self, reason: &RejectReason) {
        self.rejected += 1;
        *self.rejects_by_reason.entry(reason.kind().to_string()).or_default() += 1;
    }
}

/// Splits file contents on `\n`, dropping a single trailing empty line.
pub fn split_lines(bytes: &[u8]) -> Vec<Vec<u8>> {
    let mut lines: Vec<Vec<u8>> = bytes
        .split(|&b| b == b'\n')
        .map(|l| l.strip_suffix(b"\r").unwrap_or(l).to_vec())
        .collect();
    if lines.last().is_some_and(|l| l.is_empty()) {
        lines.pop();
    }
    lines
}

/// Reads and ingests input dumps, in the given file order.
pub fn ingest_files(paths: &[PathBuf], workers: usize) -> Result<(Corpus, IngestReport)> {
    let mut lines = Vec::new();
    let mut hasher_input = Vec::new();
    for path in paths {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        hasher_input.extend_from_slice(io::sha256_bytes(&bytes).as_bytes());
        lines.extend(split_lines(&bytes));
    }
    let (mut corpus, report) = ingest_lines(&lines, workers)?;
    let names: Vec<String> = paths
        .iter()
        .map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default())
        .collect();
    corpus.provenance.insert("source".into(), names.join(","));
    corpus.provenance.insert("input_sha256".into(), io::sha256_bytes(&hasher_input));
    Ok((corpus, report))
}
