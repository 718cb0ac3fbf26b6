use std::collections::HashSet;

use super::{FilterVerdict, Reason, TokenDoc, TokenId};
use crate::{ForgeError, Result};

pub const DEFAULT_DECONTAM_N: usize = 8;
/// Documents with at least this share of overlapping n-grams are removed.
pub const DEFAULT_DECONTAM_THRESHOLD: f64 = 0.10;

/// The set of token n-grams drawn from evaluation instances.
#[derive(Debug, Clone)]
pub struct NgramSet {
    n: usize,
    grams: HashSet<Box<[TokenId]>>,
}

impl NgramSet {
    pub fn new(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(ForgeError::validation("n-gram length must be at least 1"));
        }
        Ok(NgramSet {
            n,
            grams: HashSet::new(),
        })
    }

    pub fn from_sequences<'a, I>(n: usize, sequences: I) -> Result<Self>
    where
        I: IntoIterator<Item = &'a [TokenId]>,
    {
        let mut set = NgramSet::new(n)?;
        for seq in sequences {
            set.insert_sequence(seq);
        }
        Ok(set)
    }

    pub fn insert_sequence(&mut self, tokens: &[TokenId]) {
        for w in tokens.windows(self.n) {
            if !self.grams.contains(w) {
                self.grams.insert(w.into());
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.grams.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grams.is_empty()
    }

    pub fn contains(&self, gram: &[TokenId]) -> bool {
        self.grams.contains(gram)
    }
}

/// Fraction of the document's distinct n-grams that appear in `eval`.
/// `None` when the document is shorter than `n`.
pub fn overlap_fraction(tokens: &[TokenId], eval: &NgramSet) -> Option<f64> {
    let distinct: HashSet<&[TokenId]> = tokens.windows(eval.n).collect();
    if distinct.is_empty() {
        return None;
    }
    let hits = distinct.iter().filter(|g| eval.contains(g)).count();
    Some(hits as f64 / distinct.len() as f64)
}

/// Remove documents whose n-gram overlap with evaluation data is at least
/// `threshold` (inclusive). Documents shorter than `n` tokens are kept.
pub fn decontaminate(doc: &TokenDoc, eval: &NgramSet, threshold: f64) -> Result<FilterVerdict> {
    if !(threshold > 0.0 && threshold <= 1.0) {
        return Err(ForgeError::validation(format!(
            "decontamination threshold must lie in (0, 1], got {threshold}"
        )));
    }
    let mut verdict = FilterVerdict::keep(&doc.id);
    if matches!(overlap_fraction(&doc.tokens, eval), Some(f) if f >= threshold) {
        verdict.reject(Reason::Decontaminated);
    }
    Ok(verdict)
}
