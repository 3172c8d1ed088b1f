use xxhash_rust::xxh3::xxh3_64;

/// Turns document text into token ids. Id 0 is reserved for padding.
pub trait Tokenizer: Send + Sync {
    fn encode(&self, text: &str) -> Vec<u32>;

    fn count(&self, text: &str) -> usize {
        self.encode(text).len()
    }
}

/// Whitespace-split words hashed into a fixed vocabulary.
#[derive(Debug, Clone, Copy)]
pub struct WhitespaceTokenizer {
    pub vocab_size: u32,
}

impl Default for WhitespaceTokenizer {
    fn default() -> Self {
        WhitespaceTokenizer { vocab_size: 102_400 }
    }
}

impl Tokenizer for WhitespaceTokenizer {
    fn encode(&self, text: &str) -> Vec<u32> {
        let buckets = u64::from(self.vocab_size.max(2) - 1);
        text.split_whitespace()
            .map(|w| 1 + (xxh3_64(w.as_bytes()) % buckets) as u32)
            .collect()
    }

    fn count(&self, text: &str) -> usize {
        text.split_whitespace().count()
    }
}
