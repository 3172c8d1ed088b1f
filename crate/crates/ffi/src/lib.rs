//! C ABI over the curator library.
//!
//! Every fallible call returns a [`CurStatus`]; on failure the message is
//! available from [`cur_last_error`] on the same thread. Objects are opaque
//! handles created by `*_new`/`*_load` functions and released with the
//! matching `*_free`. Strings returned to the caller are freed with
//! [`cur_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use curator::corpus::{make_doc_id, normalize_text, ContentHash, Corpus, Document};
use curator::dedup::{dedup_corpus, DedupConfig};
use curator::pipeline::{self, PipelineConfig};
use curator::quality::QualityClassifier;
use curator::train_prep::{
    cross_doc_mask, lr_at, pack_documents, rope_config, rope_rotate, LrScheduleSpec,
    PackedSequence, RopeConfig, RopeStage,
};
use curator::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    Integrity = 6,
    Runtime = 7,
    Panic = 8,
}

impl CurStatus {
    fn of(e: &Error) -> Self {
        match e {
            Error::Config(_) | Error::Plan(_) | Error::UnknownSignal(_) | Error::Toml(_) => CurStatus::Config,
            Error::Integrity { .. } | Error::MissingArtifacts(_) => CurStatus::Integrity,
            Error::Io { .. } => CurStatus::Io,
            Error::Format(_) | Error::Json(_) => CurStatus::Format,
            Error::Invalid(_) | Error::Rejected(_) => CurStatus::InvalidArgument,
            Error::Phase { source, .. } => match CurStatus::of(source) {
                s @ (CurStatus::Integrity | CurStatus::Config) => s,
                _ => CurStatus::Runtime,
            },
            _ => CurStatus::Runtime,
        }
    }
}

/// Context-extension stage for [`cur_rope_config`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CurRopeStage {
    Pretrain = 0,
    Ext1 = 1,
    Ext2 = 2,
}

/// Plain RoPE parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurRopeConfig {
    pub seq_len: u32,
    pub head_dim: u32,
    pub theta: f64,
}

/// Learning-rate schedule boundaries and rates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurLrSpec {
    pub peak_lr: f64,
    pub warmup_end: u64,
    pub constant_end: u64,
    pub slow_decay_end: u64,
    pub slow_decay_lr: f64,
    pub end: u64,
    pub final_lr: f64,
}

/// Near-duplicate detection parameters.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurDedupParams {
    pub shingle_width: u32,
    pub num_perm: u32,
    pub bands: u32,
    pub rows: u32,
    pub jaccard_threshold: f64,
    pub top_k: u32,
    pub perm_seed: u64,
}

pub struct CurLrSchedule(LrScheduleSpec);

pub struct CurClassifier(QualityClassifier);

pub struct CurPacked(Vec<PackedSequence>);

pub struct CurDedup {
    cfg: DedupConfig,
    texts: Vec<String>,
    clusters: Vec<u64>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

/// Runs `f`, converting errors and panics into a status.
fn guard(f: impl FnOnce() -> Result<(), (CurStatus, String)>) -> CurStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            CurStatus::Ok
        }
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            CurStatus::Panic
        }
    }
}

fn lib(e: Error) -> (CurStatus, String) {
    (CurStatus::of(&e), e.to_string())
}

fn null(what: &str) -> (CurStatus, String) {
    (CurStatus::NullArgument, format!("`{what}` is null"))
}

fn invalid(msg: impl Into<String>) -> (CurStatus, String) {
    (CurStatus::InvalidArgument, msg.into())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, (CurStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("`{what}` is not UTF-8")))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, (CurStatus, String)> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, (CurStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

fn into_c_string(s: String) -> Result<*mut c_char, (CurStatus, String)> {
    CString::new(s).map(CString::into_raw).map_err(|_| invalid("string contains NUL"))
}

/// Message of the last failed call on this thread; empty after a success.
/// Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn cur_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cur_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn cur_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Normalizes text (NFC, LF line endings, blank-line collapse, trim).
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cur_normalize_text(text: *const c_char, out: *mut *mut c_char) -> CurStatus {
    guard(|| {
        let t = str_arg(text, "text")?;
        let out = out_arg(out, "out")?;
        *out = into_c_string(normalize_text(t))?;
        Ok(())
    })
}

/// Validates `spec` and creates a schedule handle.
///
/// # Safety
/// `spec` and `out` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn cur_lr_schedule_new(spec: *const CurLrSpec, out: *mut *mut CurLrSchedule) -> CurStatus {
    guard(|| {
        let s = ref_arg(spec, "spec")?;
        let out = out_arg(out, "out")?;
        let spec = LrScheduleSpec {
            peak_lr: s.peak_lr,
            warmup_end: s.warmup_end,
            constant_end: s.constant_end,
            slow_decay_end: s.slow_decay_end,
            slow_decay_lr: s.slow_decay_lr,
            end: s.end,
            final_lr: s.final_lr,
        };
        spec.validate().map_err(lib)?;
        *out = Box::into_raw(Box::new(CurLrSchedule(spec)));
        Ok(())
    })
}

/// Learning rate at `step`.
///
/// # Safety
/// `schedule` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cur_lr_schedule_at(schedule: *const CurLrSchedule, step: u64, out: *mut f64) -> CurStatus {
    guard(|| {
        let s = ref_arg(schedule, "schedule")?;
        *out_arg(out, "out")? = lr_at(step, &s.0).map_err(lib)?;
        Ok(())
    })
}

/// # Safety
/// `schedule` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cur_lr_schedule_free(schedule: *mut CurLrSchedule) {
    if !schedule.is_null() {
        drop(Box::from_raw(schedule));
    }
}

/// Loads a classifier file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn cur_classifier_load(path: *const c_char, out: *mut *mut CurClassifier) -> CurStatus {
    guard(|| {
        let p = str_arg(path, "path")?;
        let out = out_arg(out, "out")?;
        let clf = QualityClassifier::load(&PathBuf::from(p)).map_err(lib)?;
        *out = Box::into_raw(Box::new(CurClassifier(clf)));
        Ok(())
    })
}

/// Probability in [0, 1] that `text` belongs to the positive class.
///
/// # Safety
/// `clf` must be a live handle, `text` a NUL-terminated string, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cur_classifier_score(
    clf: *const CurClassifier,
    text: *const c_char,
    out: *mut f64,
) -> CurStatus {
    guard(|| {
        let c = ref_arg(clf, "clf")?;
        let t = str_arg(text, "text")?;
        *out_arg(out, "out")? = c.0.score(t);
        Ok(())
    })
}

/// # Safety
/// `clf` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cur_classifier_free(clf: *mut CurClassifier) {
    if !clf.is_null() {
        drop(Box::from_raw(clf));
    }
}

/// Packs `n_docs` token arrays into sequences of `seq_len`, in order.
///
/// # Safety
/// `docs` and `lens` must each point to `n_docs` entries; `docs[i]` to
/// `lens[i]` tokens. `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cur_pack(
    docs: *const *const u32,
    lens: *const usize,
    n_docs: usize,
    seq_len: u32,
    pad_id: u32,
    out: *mut *mut CurPacked,
) -> CurStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let mut input = Vec::with_capacity(n_docs);
        if n_docs > 0 {
            if docs.is_null() || lens.is_null() {
                return Err(null("docs"));
            }
            let docs = std::slice::from_raw_parts(docs, n_docs);
            let lens = std::slice::from_raw_parts(lens, n_docs);
            for (i, (&d, &n)) in docs.iter().zip(lens).enumerate() {
                let tokens = match (d.is_null(), n) {
                    (_, 0) => Vec::new(),
                    (true, _) => return Err(null("docs[i]")),
                    (false, n) => std::slice::from_raw_parts(d, n).to_vec(),
                };
                input.push((i.to_string(), tokens));
            }
        }
        let seqs = pack_documents(&input, seq_len as usize, pad_id).map_err(lib)?;
        *out = Box::into_raw(Box::new(CurPacked(seqs)));
        Ok(())
    })
}

fn seq_at(p: &CurPacked, seq: usize) -> Result<&PackedSequence, (CurStatus, String)> {
    p.0.get(seq).ok_or_else(|| invalid(format!("sequence {seq} out of range ({})", p.0.len())))
}

/// Number of packed sequences.
///
/// # Safety
/// `packed` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cur_packed_len(packed: *const CurPacked, out: *mut usize) -> CurStatus {
    guard(|| {
        *out_arg(out, "out")? = ref_arg(packed, "packed")?.0.len();
        Ok(())
    })
}

/// Borrows the tokens of sequence `seq`; valid while the handle lives.
/// `non_pad` receives the count of real tokens before padding.
///
/// # Safety
/// `packed` must be a live handle; out pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn cur_packed_tokens(
    packed: *const CurPacked,
    seq: usize,
    tokens: *mut *const u32,
    len: *mut usize,
    non_pad: *mut usize,
) -> CurStatus {
    guard(|| {
        let s = seq_at(ref_arg(packed, "packed")?, seq)?;
        *out_arg(tokens, "tokens")? = s.token_ids.as_ptr();
        *out_arg(len, "len")? = s.token_ids.len();
        *out_arg(non_pad, "non_pad")? = s.pad_from as usize;
        Ok(())
    })
}

/// Whether position `i` may attend to position `j` in sequence `seq`.
///
/// # Safety
/// `packed` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cur_packed_mask(
    packed: *const CurPacked,
    seq: usize,
    i: usize,
    j: usize,
    out: *mut bool,
) -> CurStatus {
    guard(|| {
        let s = seq_at(ref_arg(packed, "packed")?, seq)?;
        let mask = cross_doc_mask(s);
        if i >= mask.len() || j >= mask.len() {
            return Err(invalid(format!("position ({i}, {j}) out of range ({})", mask.len())));
        }
        *out_arg(out, "out")? = mask.allows(i, j);
        Ok(())
    })
}

/// # Safety
/// `packed` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cur_packed_free(packed: *mut CurPacked) {
    if !packed.is_null() {
        drop(Box::from_raw(packed));
    }
}

/// Writes the RoPE parameters of a stage (head size 128).
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cur_rope_config(stage: CurRopeStage, out: *mut CurRopeConfig) -> CurStatus {
    guard(|| {
        let c = rope_config(match stage {
            CurRopeStage::Pretrain => RopeStage::Pretrain,
            CurRopeStage::Ext1 => RopeStage::Ext1,
            CurRopeStage::Ext2 => RopeStage::Ext2,
        });
        *out_arg(out, "out")? = CurRopeConfig { seq_len: c.seq_len, head_dim: c.head_dim as u32, theta: c.theta };
        Ok(())
    })
}

/// Rotates the `dim`-vector `v` to `position` into `out`. `dim` must be even
/// and equal `cfg.head_dim`.
///
/// # Safety
/// `cfg` must be valid; `v` and `out` must point to `dim` doubles.
#[no_mangle]
pub unsafe extern "C" fn cur_rope_rotate(
    cfg: *const CurRopeConfig,
    v: *const f64,
    dim: usize,
    position: u64,
    out: *mut f64,
) -> CurStatus {
    guard(|| {
        let c = ref_arg(cfg, "cfg")?;
        if v.is_null() || out.is_null() {
            return Err(null("v/out"));
        }
        let rc = RopeConfig {
            seq_len: c.seq_len,
            theta: c.theta,
            head_dim: c.head_dim as usize,
            ..rope_config(RopeStage::Pretrain)
        };
        let input = std::slice::from_raw_parts(v, dim);
        let rotated = rope_rotate(input, position, &rc).map_err(lib)?;
        std::slice::from_raw_parts_mut(out, dim).copy_from_slice(&rotated);
        Ok(())
    })
}

/// Default dedup parameters.
#[no_mangle]
pub extern "C" fn cur_dedup_default_params() -> CurDedupParams {
    let d = DedupConfig::default();
    CurDedupParams {
        shingle_width: d.shingle_width as u32,
        num_perm: d.num_perm as u32,
        bands: d.bands as u32,
        rows: d.rows as u32,
        jaccard_threshold: d.jaccard_threshold,
        top_k: d.top_k as u32,
        perm_seed: d.perm_seed,
    }
}

/// Creates an empty deduplication session.
///
/// # Safety
/// `params` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn cur_dedup_new(params: *const CurDedupParams, out: *mut *mut CurDedup) -> CurStatus {
    guard(|| {
        let p = ref_arg(params, "params")?;
        let out = out_arg(out, "out")?;
        let cfg = DedupConfig {
            shingle_width: p.shingle_width as usize,
            num_perm: p.num_perm as usize,
            bands: p.bands as usize,
            rows: p.rows as usize,
            jaccard_threshold: p.jaccard_threshold,
            top_k: p.top_k as usize,
            perm_seed: p.perm_seed,
        };
        cfg.validate().map_err(lib)?;
        *out = Box::into_raw(Box::new(CurDedup { cfg, texts: Vec::new(), clusters: Vec::new() }));
        Ok(())
    })
}

/// Adds a document; its insertion index identifies it afterwards.
///
/// # Safety
/// `dedup` must be a live handle and `text` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cur_dedup_add(dedup: *mut CurDedup, text: *const c_char) -> CurStatus {
    guard(|| {
        let d = out_arg(dedup, "dedup")?;
        let t = str_arg(text, "text")?;
        d.texts.push(normalize_text(t));
        d.clusters.clear();
        Ok(())
    })
}

/// Clusters every added document; writes the number of clusters.
///
/// # Safety
/// `dedup` must be a live handle and `n_clusters` valid.
#[no_mangle]
pub unsafe extern "C" fn cur_dedup_run(dedup: *mut CurDedup, workers: usize, n_clusters: *mut usize) -> CurStatus {
    guard(|| {
        let d = out_arg(dedup, "dedup")?;
        let n_out = out_arg(n_clusters, "n_clusters")?;
        let time = chrono_epoch();
        let docs: Vec<Document> = d
            .texts
            .iter()
            .enumerate()
            .map(|(i, text)| {
                let url = format!("ffi://doc/{i}");
                let h = ContentHash::of(text);
                Document {
                    doc_id: make_doc_id(h, &url, &time),
                    url,
                    crawl_time: time,
                    language: String::new(),
                    snapshot_id: String::new(),
                    domain: "ffi".into(),
                    content_hash: h,
                    text: text.clone(),
                    extra: Default::default(),
                }
            })
            .collect();
        let index: std::collections::HashMap<String, usize> =
            docs.iter().enumerate().map(|(i, doc)| (doc.doc_id.clone(), i)).collect();
        let out = dedup_corpus(&Corpus::from_documents(docs), &d.cfg, workers.max(1)).map_err(lib)?;
        d.clusters = vec![0; d.texts.len()];
        for c in &out.clusters {
            for id in &c.member_ids {
                d.clusters[index[id]] = c.cluster_id;
            }
        }
        *n_out = out.clusters.len();
        Ok(())
    })
}

fn chrono_epoch() -> chrono::DateTime<chrono::Utc> {
    chrono::DateTime::UNIX_EPOCH
}

/// Cluster id of the document added at `index`, after [`cur_dedup_run`].
///
/// # Safety
/// `dedup` must be a live handle and `out` valid.
#[no_mangle]
pub unsafe extern "C" fn cur_dedup_cluster_of(dedup: *const CurDedup, index: usize, out: *mut u64) -> CurStatus {
    guard(|| {
        let d = ref_arg(dedup, "dedup")?;
        if d.clusters.len() != d.texts.len() {
            return Err(invalid("cur_dedup_run has not been called since the last add"));
        }
        *out_arg(out, "out")? =
            *d.clusters.get(index).ok_or_else(|| invalid(format!("index {index} out of range")))?;
        Ok(())
    })
}

/// # Safety
/// `dedup` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cur_dedup_free(dedup: *mut CurDedup) {
    if !dedup.is_null() {
        drop(Box::from_raw(dedup));
    }
}

/// Runs the full pipeline from a TOML config. `workers` of 0 keeps the
/// configured value.
///
/// # Safety
/// `config_path` must be a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cur_pipeline_run(config_path: *const c_char, workers: usize) -> CurStatus {
    guard(|| {
        let p = str_arg(config_path, "config_path")?;
        let mut cfg = PipelineConfig::load(&PathBuf::from(p)).map_err(lib)?;
        if workers > 0 {
            cfg.workers = workers;
        }
        let report = pipeline::run(&cfg).map_err(lib)?;
        if !report.reconciliation_errors.is_empty() {
            return Err((CurStatus::Runtime, report.reconciliation_errors.join("; ")));
        }
        Ok(())
    })
}

/// Recomputes the report of a work directory as a JSON string.
///
/// # Safety
/// `work_dir` must be a NUL-terminated string and `json` valid.
#[no_mangle]
pub unsafe extern "C" fn cur_pipeline_report(work_dir: *const c_char, json: *mut *mut c_char) -> CurStatus {
    guard(|| {
        let dir = str_arg(work_dir, "work_dir")?;
        let out = out_arg(json, "json")?;
        let report = pipeline::report(&PathBuf::from(dir)).map_err(lib)?;
        let text = serde_json::to_string(&report).map_err(|e| lib(e.into()))?;
        *out = into_c_string(text)?;
        Ok(())
    })
}
