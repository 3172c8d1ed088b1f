//! Packing token streams into fixed-length sequences.
//!
//! Packed binary layout (little-endian), version 1:
//!
//! ```text
//! magic "PKSQ" | version u32 | seq_len u32 | pad_id u32 | n_sequences u64
//! per sequence:
//!   n_spans u32 | pad_from u32
//!   per span: start u32 | end u32 | doc_id_len u16 | doc_id bytes
//!   tokens: seq_len × u32
//! ```

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PACKED_MAGIC: &[u8; 4] = b"PKSQ";
pub const PACKED_VERSION: u32 = 1;
/// Largest sequence length for which a dense mask may be materialized.
pub const MAX_DENSE_MASK_LEN: usize = 8192;

/// Half-open token range `[start, end)` owned by one source document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub start: u32,
    pub end: u32,
    pub doc_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackedSequence {
    /// Exactly `seq_len` ids; positions from `pad_from` on hold the pad id.
    pub token_ids: Vec<u32>,
    pub spans: Vec<Span>,
    pub pad_from: u32,
}

impl PackedSequence {
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Spans contiguous from 0, non-empty, ending at `pad_from`.
    pub fn validate(&self) -> Result<()> {
        let mut at = 0u32;
        for s in &self.spans {
            if s.start != at || s.end <= s.start {
                return Err(Error::Invalid(format!("bad span {}..{} at offset {at}", s.start, s.end)));
            }
            at = s.end;
        }
        if at != self.pad_from || self.pad_from as usize > self.token_ids.len() {
            return Err(Error::Invalid(format!(
                "spans end at {at}, pad_from {}, length {}",
                self.pad_from,
                self.token_ids.len()
            )));
        }
        Ok(())
    }
}

struct Packer {
    seq_len: usize,
    pad_id: u32,
    tokens: Vec<u32>,
    spans: Vec<Span>,
    out: Vec<PackedSequence>,
}

impl Packer {
    fn flush(&mut self) {
        if self.spans.is_empty() {
            return;
        }
        let pad_from = self.tokens.len() as u32;
        let mut tokens = std::mem::take(&mut self.tokens);
        tokens.resize(self.seq_len, self.pad_id);
        self.out.push(PackedSequence { token_ids: tokens, spans: std::mem::take(&mut self.spans), pad_from });
    }

    fn push(&mut self, doc_id: &str, piece: &[u32]) {
        if self.tokens.len() + piece.len() > self.seq_len {
            self.flush();
        }
        let start = self.tokens.len() as u32;
        self.tokens.extend_from_slice(piece);
        self.spans.push(Span { start, end: self.tokens.len() as u32, doc_id: doc_id.to_string() });
    }
}

/// Packs documents in input order. A document is appended to the open
/// sequence while it fits, otherwise the sequence is padded and closed.
/// Documents longer than `seq_len` are cut into `seq_len`-sized chunks, each
/// chunk its own span.
pub fn pack_documents<S: AsRef<str>>(
    docs: &[(S, Vec<u32>)],
    seq_len: usize,
    pad_id: u32,
) -> Result<Vec<PackedSequence>> {
    if seq_len == 0 || seq_len > u32::MAX as usize {
        return Err(Error::Config(format!("sequence length {seq_len} out of range")));
    }
    let mut p = Packer { seq_len, pad_id, tokens: Vec::with_capacity(seq_len), spans: Vec::new(), out: Vec::new() };
    for (id, tokens) in docs {
        if tokens.is_empty() {
            return Err(Error::Invalid(format!("document `{}` has no tokens", id.as_ref())));
        }
        for chunk in tokens.chunks(seq_len) {
            p.push(id.as_ref(), chunk);
        }
    }
    p.flush();
    Ok(p.out)
}

/// Block-diagonal causal attendability over a packed sequence.
///
/// Stores only span boundaries, so it is O(spans) regardless of length.
#[derive(Debug, Clone)]
pub struct CrossDocMask {
    starts: Vec<u32>,
    ends: Vec<u32>,
    pad_from: u32,
    len: usize,
}

pub fn cross_doc_mask(seq: &PackedSequence) -> CrossDocMask {
    CrossDocMask {
        starts: seq.spans.iter().map(|s| s.start).collect(),
        ends: seq.spans.iter().map(|s| s.end).collect(),
        pad_from: seq.pad_from,
        len: seq.token_ids.len(),
    }
}

/// Row-major dense mask bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DenseMask {
    pub len: usize,
    bits: Vec<u64>,
}

impl DenseMask {
    pub fn get(&self, i: usize, j: usize) -> bool {
        let k = i * self.len + j;
        self.bits[k / 64] >> (k % 64) & 1 == 1
    }
}

impl CrossDocMask {
    fn span_index(&self, pos: u32) -> Option<usize> {
        if pos >= self.pad_from {
            return None;
        }
        let k = self.starts.partition_point(|&s| s <= pos);
        (k > 0 && pos < self.ends[k - 1]).then(|| k - 1)
    }

    /// Whether query position `i` may attend to key position `j`.
    pub fn allows(&self, i: usize, j: usize) -> bool {
        if j > i || i >= self.len {
            return false;
        }
        match (self.span_index(i as u32), self.span_index(j as u32)) {
            (Some(a), Some(b)) => a == b,
            _ => false,
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Dense bitset, refused above [`MAX_DENSE_MASK_LEN`].
    pub fn materialize(&self) -> Result<DenseMask> {
        if self.len > MAX_DENSE_MASK_LEN {
            return Err(Error::Invalid(format!(
                "refusing to materialize a {0}x{0} mask (limit {MAX_DENSE_MASK_LEN})",
                self.len
            )));
        }
        let n = self.len;
        let mut bits = vec![0u64; (n * n).div_ceil(64)];
        for (s, e) in self.starts.iter().zip(&self.ends) {
            for i in *s as usize..*e as usize {
                for j in *s as usize..=i {
                    let k = i * n + j;
                    bits[k / 64] |= 1 << (k % 64);
                }
            }
        }
        Ok(DenseMask { len: n, bits })
    }
}

fn put_u32(w: &mut impl Write, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

/// Writes sequences in the packed binary format.
pub fn write_packed(
    w: &mut impl Write,
    seqs: &[PackedSequence],
    seq_len: u32,
    pad_id: u32,
) -> Result<()> {
    let io = |e: std::io::Error| Error::Format(e.to_string());
    w.write_all(PACKED_MAGIC).map_err(io)?;
    put_u32(w, PACKED_VERSION).map_err(io)?;
    put_u32(w, seq_len).map_err(io)?;
    put_u32(w, pad_id).map_err(io)?;
    w.write_all(&(seqs.len() as u64).to_le_bytes()).map_err(io)?;
    for s in seqs {
        if s.token_ids.len() != seq_len as usize {
            return Err(Error::Invalid(format!(
                "sequence has {} tokens, header says {seq_len}",
                s.token_ids.len()
            )));
        }
        put_u32(w, s.spans.len() as u32).map_err(io)?;
        put_u32(w, s.pad_from).map_err(io)?;
        for sp in &s.spans {
            let id = sp.doc_id.as_bytes();
            let id_len = u16::try_from(id.len())
                .map_err(|_| Error::Invalid(format!("doc id `{}` too long", sp.doc_id)))?;
            put_u32(w, sp.start).map_err(io)?;
            put_u32(w, sp.end).map_err(io)?;
            w.write_all(&id_len.to_le_bytes()).map_err(io)?;
            w.write_all(id).map_err(io)?;
        }
        for &t in &s.token_ids {
            put_u32(w, t).map_err(io)?;
        }
    }
    Ok(())
}

/// Reads the packed binary format; returns `(seq_len, pad_id, sequences)`.
pub fn read_packed(r: &mut impl Read) -> Result<(u32, u32, Vec<PackedSequence>)> {
    let mut buf4 = [0u8; 4];
    let mut u32_ = |r: &mut dyn Read| -> Result<u32> {
        r.read_exact(&mut buf4).map_err(|e| Error::Format(format!("truncated packed file: {e}")))?;
        Ok(u32::from_le_bytes(buf4))
    };
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(|e| Error::Format(e.to_string()))?;
    if &magic != PACKED_MAGIC {
        return Err(Error::Format("bad packed magic".into()));
    }
    let version = u32_(r)?;
    if version != PACKED_VERSION {
        return Err(Error::Format(format!("unsupported packed version {version}")));
    }
    let seq_len = u32_(r)?;
    let pad_id = u32_(r)?;
    let mut n = [0u8; 8];
    r.read_exact(&mut n).map_err(|e| Error::Format(e.to_string()))?;
    let n = u64::from_le_bytes(n);
    let mut out = Vec::new();
    for _ in 0..n {
        let n_spans = u32_(r)?;
        let pad_from = u32_(r)?;
        let mut spans = Vec::with_capacity(n_spans.min(1 << 16) as usize);
        for _ in 0..n_spans {
            let start = u32_(r)?;
            let end = u32_(r)?;
            let mut l = [0u8; 2];
            r.read_exact(&mut l).map_err(|e| Error::Format(e.to_string()))?;
            let mut id = vec![0u8; u16::from_le_bytes(l) as usize];
            r.read_exact(&mut id).map_err(|e| Error::Format(e.to_string()))?;
            let doc_id = String::from_utf8(id).map_err(|_| Error::Format("non UTF-8 doc id".into()))?;
            spans.push(Span { start, end, doc_id });
        }
        let token_ids = (0..seq_len).map(|_| u32_(r)).collect::<Result<Vec<_>>>()?;
        let seq = PackedSequence { token_ids, spans, pad_from };
        seq.validate().map_err(|e| Error::Format(e.to_string()))?;
        out.push(seq);
    }
    if r.read(&mut [0u8; 1]).map_err(|e| Error::Format(e.to_string()))? != 0 {
        return Err(Error::Format("trailing bytes after packed sequences".into()));
    }
    Ok((seq_len, pad_id, out))
}

/// Convenience: write a packed file to `path`.
pub(crate) fn write_packed_file(path: &Path, seqs: &[PackedSequence], seq_len: u32, pad_id: u32) -> Result<()> {
    crate::io::ensure_parent(path)?;
    let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = std::io::BufWriter::new(f);
    write_packed(&mut w, seqs, seq_len, pad_id)?;
    w.flush().map_err(|e| Error::io(path, e))
}
