//! Document-level corpus filters.
//!
//! All filters are pure functions of a single document plus their
//! parameters, so callers are free to run them over documents in parallel.

mod decontam;
mod repeats;
mod wordfreq;

use serde::{Deserialize, Serialize};

pub use decontam::{
    decontaminate, overlap_fraction, NgramSet, DEFAULT_DECONTAM_N, DEFAULT_DECONTAM_THRESHOLD,
};
pub use repeats::{
    filter_repeat_docs, find_repeat_spans, repeat_loss_mask, RepeatParams, RepeatSpan,
};
pub use wordfreq::{
    word_frequency_filter, WordFrequencyStats, TOP2_WORD_MAX_FRACTION, TOP_WORD_MAX_FRACTION,
};

pub type TokenId = u32;

/// A document: an id plus its token sequence, optionally with raw text and
/// repository metadata.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TokenDoc {
    pub id: String,
    pub tokens: Vec<TokenId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stars: Option<i64>,
}

impl TokenDoc {
    pub fn new(id: impl Into<String>, tokens: Vec<TokenId>) -> Self {
        TokenDoc {
            id: id.into(),
            tokens,
            text: None,
            stars: None,
        }
    }

    pub fn with_text(mut self, text: impl Into<String>) -> Self {
        self.text = Some(text.into());
        self
    }

    pub fn validate(&self) -> crate::Result<()> {
        if self.id.is_empty() {
            return Err(crate::ForgeError::validation(
                "document id must be non-empty",
            ));
        }
        Ok(())
    }
}

/// Why a document was dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reason {
    RepeatNgram,
    TopWordFreq,
    Top2WordFreq,
    Decontaminated,
    LowStars,
}

impl Reason {
    pub fn as_str(self) -> &'static str {
        match self {
            Reason::RepeatNgram => "repeat_ngram",
            Reason::TopWordFreq => "top_word_freq",
            Reason::Top2WordFreq => "top2_word_freq",
            Reason::Decontaminated => "decontaminated",
            Reason::LowStars => "low_stars",
        }
    }
}

/// Outcome of running one or more rules over a document.
///
/// `kept` is derived from `reasons`; use [`FilterVerdict::reject`] and
/// [`FilterVerdict::merge`] rather than setting it by hand.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterVerdict {
    #[serde(rename = "id")]
    pub doc_id: String,
    pub kept: bool,
    pub reasons: Vec<Reason>,
    pub spans: Vec<RepeatSpan>,
}

impl FilterVerdict {
    pub fn keep(doc_id: impl Into<String>) -> Self {
        FilterVerdict {
            doc_id: doc_id.into(),
            kept: true,
            reasons: Vec::new(),
            spans: Vec::new(),
        }
    }

    pub fn reject(&mut self, reason: Reason) {
        if !self.reasons.contains(&reason) {
            self.reasons.push(reason);
        }
        self.kept = false;
    }

    /// Fold another rule's verdict for the same document into this one.
    pub fn merge(&mut self, other: FilterVerdict) {
        debug_assert_eq!(self.doc_id, other.doc_id);
        for reason in other.reasons {
            self.reject(reason);
        }
        self.spans.extend(other.spans);
    }
}

/// Repository-popularity filter for code documents: keep iff `stars >= 2`.
/// Documents without star metadata are not subject to the rule.
pub fn star_filter(doc: &TokenDoc) -> FilterVerdict {
    let mut verdict = FilterVerdict::keep(&doc.id);
    if matches!(doc.stars, Some(s) if s < 2) {
        verdict.reject(Reason::LowStars);
    }
    verdict
}
