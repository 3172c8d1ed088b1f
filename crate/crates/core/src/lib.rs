//! Corpus curation and pre-training data preparation.
//!
//! The pipeline runs ingest, deduplication with frequency signals, quality
//! annotation, per-signal sampling, curriculum stage emission and
//! training-side preparation (LR schedule, packing, attention masks, RoPE).

pub mod corpus;
pub mod curriculum;
pub mod dedup;
pub mod error;
pub mod io;
pub mod pipeline;
pub mod quality;
pub mod sampling;
pub mod synth;
pub mod tokenize;
pub mod train_prep;

pub use error::{Error, Result};

/// Runs `f` inside a rayon pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}
