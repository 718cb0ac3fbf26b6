use std::collections::HashMap;

use super::{FilterVerdict, Reason};
use crate::{ForgeError, Result};

/// A document is dropped when its most frequent word exceeds this share.
pub const TOP_WORD_MAX_FRACTION: f64 = 0.30;
/// ... or when its two most frequent words together exceed this share.
pub const TOP2_WORD_MAX_FRACTION: f64 = 0.50;

/// Word counts behind the frequency heuristics. Words are maximal runs of
/// non-whitespace characters; matching is case-sensitive.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WordFrequencyStats {
    pub total_words: usize,
    pub top1: usize,
    pub top2: usize,
}

impl WordFrequencyStats {
    pub fn from_text(text: &str) -> Result<Self> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut total_words = 0;
        for word in text.split_whitespace() {
            *counts.entry(word).or_default() += 1;
            total_words += 1;
        }
        if total_words == 0 {
            return Err(ForgeError::validation(
                "document has no words; word-frequency rules are undecidable",
            ));
        }
        let (mut first, mut second) = (0, 0);
        for &c in counts.values() {
            if c > first {
                second = first;
                first = c;
            } else if c > second {
                second = c;
            }
        }
        Ok(WordFrequencyStats {
            total_words,
            top1: first,
            top2: first + second,
        })
    }

    pub fn top1_fraction(&self) -> f64 {
        self.top1 as f64 / self.total_words as f64
    }

    pub fn top2_fraction(&self) -> f64 {
        self.top2 as f64 / self.total_words as f64
    }

    /// Both thresholds are strict: exactly 30% / 50% is kept.
    pub fn reasons(&self) -> Vec<Reason> {
        let mut reasons = Vec::new();
        if self.top1_fraction() > TOP_WORD_MAX_FRACTION {
            reasons.push(Reason::TopWordFreq);
        }
        if self.top2_fraction() > TOP2_WORD_MAX_FRACTION {
            reasons.push(Reason::Top2WordFreq);
        }
        reasons
    }
}

/// Word-frequency heuristics used on code documents.
pub fn word_frequency_filter(doc_id: &str, text: &str) -> Result<FilterVerdict> {
    let stats = WordFrequencyStats::from_text(text)?;
    let mut verdict = FilterVerdict::keep(doc_id);
    for reason in stats.reasons() {
        verdict.reject(reason);
    }
    Ok(verdict)
}
