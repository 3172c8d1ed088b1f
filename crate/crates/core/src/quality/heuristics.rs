use std::collections::HashMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HeuristicThresholds {
    pub min_words: usize,
    pub min_mean_word_length: f64,
    pub max_mean_word_length: f64,
    pub min_alpha_ratio: f64,
    pub max_line_repeat_ratio: f64,
}

impl Default for HeuristicThresholds {
    fn default() -> Self {
        HeuristicThresholds {
            min_words: 20,
            min_mean_word_length: 2.0,
            max_mean_word_length: 12.0,
            min_alpha_ratio: 0.6,
            max_line_repeat_ratio: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TextStats {
    pub word_count: usize,
    /// Mean characters per whitespace-separated word.
    pub mean_word_length: f64,
    /// Alphabetic characters over non-whitespace characters.
    pub alpha_ratio: f64,
    /// Share of non-blank lines whose content occurs more than once.
    pub max_line_repeat_ratio: f64,
}

impl TextStats {
    pub fn of(text: &str) -> Self {
        let mut word_count = 0usize;
        let mut word_chars = 0usize;
        for w in text.split_whitespace() {
            word_count += 1;
            word_chars += w.chars().count();
        }
        let (mut alpha, mut visible) = (0usize, 0usize);
        for c in text.chars().filter(|c| !c.is_whitespace()) {
            visible += 1;
            if c.is_alphabetic() {
                alpha += 1;
            }
        }
        let mut line_counts: HashMap<&str, usize> = HashMap::new();
        let mut lines = 0usize;
        for l in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
            lines += 1;
            *line_counts.entry(l).or_default() += 1;
        }
        let repeated: usize = line_counts.values().filter(|&&c| c > 1).sum();
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        TextStats {
            word_count,
            mean_word_length: ratio(word_chars, word_count),
            alpha_ratio: ratio(alpha, visible),
            max_line_repeat_ratio: ratio(repeated, lines),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Keep,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeuristicReport {
    pub verdict: Verdict,
    pub reasons: Vec<String>,
    pub stats: TextStats,
}

/// Applies the permissive rule set; drop iff any rule fails.
pub fn heuristic_filter(text: &str, th: &HeuristicThresholds) -> HeuristicReport {
    let stats = TextStats::of(text);
    let mut reasons = Vec::new();
    if stats.word_count < th.min_words {
        reasons.push("min_words".to_string());
    }
    if stats.mean_word_length < th.min_mean_word_length
        || stats.mean_word_length > th.max_mean_word_length
    {
        reasons.push("mean_word_length".to_string());
    }
    if stats.alpha_ratio < th.min_alpha_ratio {
        reasons.push("alpha_ratio".to_string());
    }
    if stats.max_line_repeat_ratio > th.max_line_repeat_ratio {
        reasons.push("line_repeat".to_string());
    }
    let verdict = if reasons.is_empty() { Verdict::Keep } else { Verdict::Drop };
    HeuristicReport { verdict, reasons, stats }
}
