//! Linear bag-of-n-grams classifiers over hashed word features.
//!
//! Binary layout (little-endian), version 1:
//!
//! ```text
//! magic "QCLF" | version u32 | model_id str | dims u32 | n_orders u8 | orders [u8]
//! source str | seed u64 | epochs u32 | lr f64 | train_accuracy f64
//! bias f64 | n_weights u64 | weights [f64]
//! ```
//!
//! where `str` is a u32 byte length followed by UTF-8 bytes.

use std::collections::BTreeMap;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use xxhash_rust::xxh3::xxh3_64;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"QCLF";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Hyper {
    pub orders: Vec<u8>,
    pub dims: u32,
    pub epochs: u32,
    pub lr: f64,
    pub seed: u64,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper { orders: vec![1, 2], dims: 1 << 18, epochs: 10, lr: 0.5, seed: 17 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub source: String,
    pub seed: u64,
    pub epochs: u32,
    pub lr: f64,
    pub train_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityClassifier {
    pub model_id: String,
    pub dims: u32,
    pub orders: Vec<u8>,
    pub weights: Vec<f64>,
    pub bias: f64,
    pub meta: TrainingMeta,
}

/// Sparse feature vector: hashed n-gram counts scaled by `1/sqrt(n_words)`.
pub fn features(text: &str, orders: &[u8], dims: u32) -> Vec<(u32, f64)> {
    let lower = text.to_lowercase();
    let words: Vec<&str> = lower.split_whitespace().collect();
    if words.is_empty() || dims == 0 {
        return Vec::new();
    }
    let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
    let mut key = String::new();
    for &order in orders {
        let n = order as usize;
        if n == 0 || n > words.len() {
            continue;
        }
        for gram in words.windows(n) {
            key.clear();
            key.push((b'0' + order) as char);
            for w in gram {
                key.push(' ');
                key.push_str(w);
            }
            let idx = (xxh3_64(key.as_bytes()) % u64::from(dims)) as u32;
            *counts.entry(idx).or_default() += 1.0;
        }
    }
    let scale = 1.0 / (words.len() as f64).sqrt();
    counts.into_iter().map(|(i, c)| (i, c * scale)).collect()
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl QualityClassifier {
    /// A classifier with all weights zero.
    pub fn zeroed(model_id: impl Into<String>, hyper: &Hyper) -> Self {
        QualityClassifier {
            model_id: model_id.into(),
            dims: hyper.dims,
            orders: hyper.orders.clone(),
            weights: vec![0.0; hyper.dims as usize],
            bias: 0.0,
            meta: TrainingMeta {
                source: String::new(),
                seed: hyper.seed,
                epochs: 0,
                lr: hyper.lr,
                train_accuracy: 0.0,
            },
        }
    }

    fn margin(&self, feats: &[(u32, f64)]) -> f64 {
        self.bias + feats.iter().map(|&(i, x)| self.weights[i as usize] * x).sum::<f64>()
    }

    /// Probability in `[0, 1]` that `text` is from the positive source.
    pub fn score(&self, text: &str) -> f64 {
        sigmoid(self.margin(&features(text, &self.orders, self.dims)))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(64 + self.weights.len() * 8);
        let put_str = |out: &mut Vec<u8>, s: &str| {
            out.extend_from_slice(&(s.len() as u32).to_le_bytes());
            out.extend_from_slice(s.as_bytes());
        };
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        put_str(&mut out, &self.model_id);
        out.extend_from_slice(&self.dims.to_le_bytes());
        out.push(self.orders.len() as u8);
        out.extend_from_slice(&self.orders);
        put_str(&mut out, &self.meta.source);
        out.extend_from_slice(&self.meta.seed.to_le_bytes());
        out.extend_from_slice(&self.meta.epochs.to_le_bytes());
        out.extend_from_slice(&self.meta.lr.to_le_bytes());
        out.extend_from_slice(&self.meta.train_accuracy.to_le_bytes());
        out.extend_from_slice(&self.bias.to_le_bytes());
        out.extend_from_slice(&(self.weights.len() as u64).to_le_bytes());
        for w in &self.weights {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Format("bad classifier magic".into()));
        }
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported classifier version {version}")));
        }
        let model_id = r.string()?;
        let dims = r.u32()?;
        let n_orders = r.take(1)?[0] as usize;
        let orders = r.take(n_orders)?.to_vec();
        let source = r.string()?;
        let seed = r.u64()?;
        let epochs = r.u32()?;
        let lr = r.f64()?;
        let train_accuracy = r.f64()?;
        let bias = r.f64()?;
        let n = r.u64()? as usize;
        if n != dims as usize {
            return Err(Error::Format(format!("{n} weights for {dims} dims")));
        }
        let weights = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        if r.pos != bytes.len() {
            return Err(Error::Format("trailing bytes after classifier".into()));
        }
        Ok(QualityClassifier {
            model_id,
            dims,
            orders,
            weights,
            bias,
            meta: TrainingMeta { source, seed, epochs, lr, train_accuracy },
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::ensure_parent(path)?;
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| Error::Format("truncated classifier".into()))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::Format("non UTF-8 string".into()))
    }
}

/// Trains a logistic model by seeded SGD. Identical inputs and seed give
/// bit-identical weights.
pub fn train_classifier<P, N>(
    model_id: &str,
    source: &str,
    positives: &[P],
    negatives: &[N],
    hyper: &Hyper,
) -> Result<QualityClassifier>
where
    P: AsRef<str>,
    N: AsRef<str>,
{
    if positives.is_empty() || negatives.is_empty() {
        return Err(Error::Invalid(format!(
            "classifier `{model_id}` needs non-empty classes ({} positives, {} negatives)",
            positives.len(),
            negatives.len()
        )));
    }
    if hyper.dims == 0 || hyper.orders.is_empty() {
        return Err(Error::Config("classifier needs dims >= 1 and at least one order".into()));
    }
    let examples: Vec<(Vec<(u32, f64)>, f64)> = positives
        .iter()
        .map(|t| (features(t.as_ref(), &hyper.orders, hyper.dims), 1.0))
        .chain(negatives.iter().map(|t| (features(t.as_ref(), &hyper.orders, hyper.dims), 0.0)))
        .collect();

    let mut clf = QualityClassifier::zeroed(model_id, hyper);
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    for _ in 0..hyper.epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let (feats, y) = &examples[i];
            let g = sigmoid(clf.margin(feats)) - y;
            for &(f, x) in feats {
                clf.weights[f as usize] -= hyper.lr * g * x;
            }
            clf.bias -= hyper.lr * g;
        }
    }
    let correct = examples
        .iter()
        .filter(|(feats, y)| (sigmoid(clf.margin(feats)) >= 0.5) == (*y == 1.0))
        .count();
    clf.meta = TrainingMeta {
        source: source.to_string(),
        seed: hyper.seed,
        epochs: hyper.epochs,
        lr: hyper.lr,
        train_accuracy: correct as f64 / examples.len() as f64,
    };
    Ok(clf)
}
