use serde::{Deserialize, Serialize};

use crate::{ForgeError, Result};

/// Parameter initialization scheme.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    /// Every weight matrix drawn from N(0, 0.02^2).
    #[serde(alias = "standard")]
    Standard002,
    /// N(0, 1) scaled by 1/sqrt(d_model) on input projections and by
    /// 1/sqrt(2 * d_model * layer_idx) on per-layer output projections.
    #[serde(alias = "scaled")]
    Scaled0424,
}

/// Hyperparameters of the reference transformer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub n_kv_heads: usize,
    pub vocab_size: usize,
    /// SwiGLU width; derived from `d_model` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden_size: Option<usize>,
    #[serde(default = "defaults::rope_theta")]
    pub rope_theta: f64,
    #[serde(default = "defaults::z_loss_weight")]
    pub z_loss_weight: f64,
    #[serde(default = "defaults::norm_eps")]
    pub norm_eps: f64,
    #[serde(default = "defaults::init")]
    pub init: InitScheme,
    pub max_seq_len: usize,
    /// RMSNorm on per-head queries and keys.
    #[serde(default = "defaults::yes")]
    pub qk_norm: bool,
    /// Apply QK-norm after the rotary embedding instead of before it.
    #[serde(default)]
    pub qk_norm_after_rope: bool,
}

mod defaults {
    use super::InitScheme;

    pub fn rope_theta() -> f64 {
        500_000.0
    }

    pub fn z_loss_weight() -> f64 {
        1e-4
    }

    pub fn norm_eps() -> f64 {
        1e-6
    }

    pub fn init() -> InitScheme {
        InitScheme::Standard002
    }

    pub fn yes() -> bool {
        true
    }
}

/// `(8/3) * d_model` rounded up to a multiple of 128.
pub fn swiglu_hidden_size(d_model: usize) -> usize {
    let raw = (8 * d_model).div_ceil(3);
    raw.div_ceil(128) * 128
}

impl ModelConfig {
    /// A desk-scale config with the usual defaults filled in.
    pub fn tiny(
        d_model: usize,
        n_layers: usize,
        n_heads: usize,
        vocab_size: usize,
        max_seq_len: usize,
    ) -> Self {
        ModelConfig {
            d_model,
            n_layers,
            n_heads,
            n_kv_heads: n_heads,
            vocab_size,
            hidden_size: None,
            rope_theta: defaults::rope_theta(),
            z_loss_weight: defaults::z_loss_weight(),
            norm_eps: defaults::norm_eps(),
            init: defaults::init(),
            max_seq_len,
            qk_norm: true,
            qk_norm_after_rope: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(ForgeError::Config(msg));
        if self.d_model == 0 || self.n_layers == 0 || self.n_heads == 0 || self.n_kv_heads == 0 {
            return bad("d_model, n_layers, n_heads and n_kv_heads must be positive".into());
        }
        if self.vocab_size == 0 || self.max_seq_len == 0 {
            return bad("vocab_size and max_seq_len must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.n_kv_heads > self.n_heads || !self.n_heads.is_multiple_of(self.n_kv_heads) {
            return bad(format!(
                "n_kv_heads {} must divide n_heads {}",
                self.n_kv_heads, self.n_heads
            ));
        }
        if !self.head_dim().is_multiple_of(2) {
            return bad(format!(
                "head dimension {} must be even for rotary embeddings",
                self.head_dim()
            ));
        }
        if self.hidden_size == Some(0) {
            return bad("hidden_size must be positive".into());
        }
        let positive = |x: f64| x > 0.0;
        if !positive(self.rope_theta)
            || !positive(self.norm_eps)
            || self.z_loss_weight.is_nan()
            || self.z_loss_weight < 0.0
        {
            return bad(
                "rope_theta and norm_eps must be positive and z_loss_weight non-negative".into(),
            );
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn kv_dim(&self) -> usize {
        self.n_kv_heads * self.head_dim()
    }

    pub fn hidden(&self) -> usize {
        self.hidden_size
            .unwrap_or_else(|| swiglu_hidden_size(self.d_model))
    }

    /// Same config with `hidden_size` made explicit, as stored in checkpoints.
    pub fn resolved(&self) -> Self {
        ModelConfig {
            hidden_size: Some(self.hidden()),
            ..self.clone()
        }
    }

    pub fn num_params(&self) -> usize {
        super::ParamLayout::new(self).num_params()
    }
}
