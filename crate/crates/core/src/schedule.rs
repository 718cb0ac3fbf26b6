//! Learning-rate schedules: linear warmup, cosine decay to a floor,
//! optional truncation, and a linear anneal to zero.
//!
//! Warmup is counted in optimizer steps; every later segment is positioned
//! in consumed tokens, with `tokens_per_step` bridging the two.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::{ForgeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSpec {
    pub peak_lr: f64,
    pub warmup_steps: u64,
    /// Token count at which the cosine reaches `floor_fraction * peak_lr`.
    pub cosine_horizon_tokens: u64,
    #[serde(default = "ScheduleSpec::default_floor")]
    pub floor_fraction: f64,
    /// Cut the cosine here; the run either ends or anneals linearly.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncate_at_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub anneal_tokens: Option<u64>,
    pub tokens_per_step: u64,
}

impl ScheduleSpec {
    fn default_floor() -> f64 {
        0.1
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ForgeError::Config(msg));
        if !(self.peak_lr.is_finite() && self.peak_lr > 0.0) {
            return bad(format!("peak_lr must be positive, got {}", self.peak_lr));
        }
        if !(self.floor_fraction > 0.0 && self.floor_fraction < 1.0) {
            return bad(format!(
                "floor_fraction must lie in (0, 1), got {}",
                self.floor_fraction
            ));
        }
        if self.tokens_per_step == 0 {
            return bad("tokens_per_step must be positive".into());
        }
        if self.cosine_horizon_tokens <= self.warmup_tokens() {
            return bad(format!(
                "cosine horizon ({} tokens) must lie beyond the end of warmup ({} tokens)",
                self.cosine_horizon_tokens,
                self.warmup_tokens()
            ));
        }
        if let Some(t) = self.truncate_at_tokens {
            if t > self.cosine_horizon_tokens {
                return bad(format!(
                    "truncation point {t} lies beyond the cosine horizon {}",
                    self.cosine_horizon_tokens
                ));
            }
        }
        match (self.truncate_at_tokens, self.anneal_tokens) {
            (None, Some(_)) => bad("an anneal segment requires truncate_at_tokens".into()),
            (_, Some(0)) => bad("anneal_tokens must be positive".into()),
            _ => Ok(()),
        }
    }

    pub fn warmup_tokens(&self) -> u64 {
        self.warmup_steps * self.tokens_per_step
    }

    pub fn floor_lr(&self) -> f64 {
        self.floor_fraction * self.peak_lr
    }

    /// Tokens after which the learning rate is pinned at zero, if the
    /// schedule ends at all. An untruncated cosine holds its floor forever.
    pub fn end_tokens(&self) -> Option<u64> {
        self.truncate_at_tokens
            .map(|t| t + self.anneal_tokens.unwrap_or(0))
    }

    /// Learning rate for optimizer step `step`. Step 0 has rate 0 during
    /// warmup; the first update happens at step 1.
    pub fn lr_at(&self, step: u64) -> Result<f64> {
        self.lr_at_tokens(step as f64 * self.tokens_per_step as f64)
    }

    /// Learning rate once `tokens` tokens have been consumed.
    pub fn lr_at_tokens(&self, tokens: f64) -> Result<f64> {
        self.validate()?;
        if tokens.is_nan() || tokens < 0.0 {
            return Err(ForgeError::validation(format!(
                "token position must be non-negative, got {tokens}"
            )));
        }
        let warmup = self.warmup_tokens() as f64;
        if tokens < warmup {
            return Ok(self.peak_lr * (tokens / warmup));
        }
        match self.truncate_at_tokens {
            Some(cut) if tokens > cut as f64 => {
                let Some(anneal) = self.anneal_tokens else {
                    return Ok(0.0);
                };
                let into = tokens - cut as f64;
                if into >= anneal as f64 {
                    return Ok(0.0);
                }
                Ok(self.cosine(cut as f64) * (1.0 - into / anneal as f64))
            }
            _ => Ok(self.cosine(tokens)),
        }
    }

    fn cosine(&self, tokens: f64) -> f64 {
        let warmup = self.warmup_tokens() as f64;
        let span = self.cosine_horizon_tokens as f64 - warmup;
        let progress = (tokens - warmup) / span;
        let floor = self.floor_lr();
        if progress >= 1.0 {
            return floor;
        }
        self.peak_lr - (self.peak_lr - floor) * 0.5 * (1.0 - (PI * progress).cos())
    }

    /// `(step, tokens, lr)` rows for steps `0..=steps`.
    pub fn table(&self, steps: u64) -> Result<Vec<(u64, u64, f64)>> {
        (0..=steps)
            .map(|s| Ok((s, s * self.tokens_per_step, self.lr_at(s)?)))
            .collect()
    }
}

/// A pure linear decay from `current_lr` to zero over `anneal_tokens`,
/// expressed as a schedule whose cosine is truncated before it starts.
pub fn microanneal_schedule(
    current_lr: f64,
    anneal_tokens: u64,
    tokens_per_step: u64,
) -> Result<ScheduleSpec> {
    let spec = ScheduleSpec {
        peak_lr: current_lr,
        warmup_steps: 0,
        cosine_horizon_tokens: anneal_tokens,
        floor_fraction: ScheduleSpec::default_floor(),
        truncate_at_tokens: Some(0),
        anneal_tokens: Some(anneal_tokens),
        tokens_per_step,
    };
    spec.validate()?;
    Ok(spec)
}
