use serde::{Deserialize, Serialize};

use super::{FilterVerdict, Reason, TokenDoc, TokenId};
use crate::{ForgeError, Result};

/// A maximal run of one n-gram repeated back-to-back.
///
/// `end - start == n * count`, and `tokens[start..start + n]` occurs `count`
/// times consecutively in `tokens[start..end]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct RepeatSpan {
    pub start: usize,
    pub end: usize,
    pub n: usize,
    pub count: usize,
}

impl RepeatSpan {
    pub fn contains(&self, idx: usize) -> bool {
        (self.start..self.end).contains(&idx)
    }
}

/// Longest n-gram considered and the number of back-to-back repetitions
/// that makes a run pathological.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RepeatParams {
    n_max: usize,
    min_count: usize,
}

impl Default for RepeatParams {
    fn default() -> Self {
        RepeatParams {
            n_max: 13,
            min_count: 32,
        }
    }
}

impl RepeatParams {
    pub fn new(n_max: usize, min_count: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(ForgeError::validation("n_max must be at least 1"));
        }
        if min_count < 2 {
            return Err(ForgeError::validation("min_count must be at least 2"));
        }
        Ok(RepeatParams { n_max, min_count })
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }
}

/// Find every maximal back-to-back repetition of an n-gram (`1 <= n <= n_max`)
/// occurring at least `min_count` times.
///
/// For each `n` this is a single pass over `tokens[i] == tokens[i - n]`: a
/// maximal run of `L` matches starting at `a` is a period-`n` region
/// `[a - n, a + L)` holding `L / n + 1` whole copies of its leading n-gram.
/// A period-`n` run is also periodic in every multiple of `n`; each
/// qualifying `(n, span)` pair is reported. Results are sorted by
/// `(start, n)`.
pub fn find_repeat_spans(tokens: &[TokenId], params: &RepeatParams) -> Vec<RepeatSpan> {
    let len = tokens.len();
    let mut spans = Vec::new();
    for n in 1..=params.n_max {
        if len < 2 * n {
            break;
        }
        let mut i = n;
        while i < len {
            if tokens[i] != tokens[i - n] {
                i += 1;
                continue;
            }
            let run_start = i;
            while i < len && tokens[i] == tokens[i - n] {
                i += 1;
            }
            let count = (i - run_start) / n + 1;
            if count >= params.min_count {
                let start = run_start - n;
                spans.push(RepeatSpan {
                    start,
                    end: start + n * count,
                    n,
                    count,
                });
            }
        }
    }
    spans.sort_unstable_by_key(|s| (s.start, s.n));
    spans
}

/// Drop documents containing any pathological repeat run.
pub fn filter_repeat_docs(doc: &TokenDoc, params: &RepeatParams) -> FilterVerdict {
    let spans = find_repeat_spans(&doc.tokens, params);
    let mut verdict = FilterVerdict::keep(&doc.id);
    if !spans.is_empty() {
        verdict.reject(Reason::RepeatNgram);
        verdict.spans = spans;
    }
    verdict
}

/// Per-token loss mask: `false` for tokens inside the union of all repeat
/// spans, `true` elsewhere.
pub fn repeat_loss_mask(tokens: &[TokenId], params: &RepeatParams) -> Vec<bool> {
    let mut mask = vec![true; tokens.len()];
    for span in find_repeat_spans(tokens, params) {
        mask[span.start..span.end].fill(false);
    }
    mask
}
