use serde::{Deserialize, Serialize};

use super::tensor::{Mat, Scalar};
use super::{ModelParams, ParamKind};
use crate::{ForgeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    #[serde(default = "AdamWConfig::default_betas")]
    pub betas: (f64, f64),
    #[serde(default = "AdamWConfig::default_eps")]
    pub eps: f64,
    /// Decoupled decay: each step multiplies parameters by `1 - weight_decay * lr`.
    #[serde(default = "AdamWConfig::default_wd")]
    pub weight_decay: f64,
    /// Skip weight decay on the token embedding.
    #[serde(default = "AdamWConfig::default_exclude")]
    pub exclude_embeddings: bool,
}

impl AdamWConfig {
    fn default_betas() -> (f64, f64) {
        (0.9, 0.95)
    }

    fn default_eps() -> f64 {
        1e-8
    }

    fn default_wd() -> f64 {
        0.1
    }

    fn default_exclude() -> bool {
        true
    }
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            betas: Self::default_betas(),
            eps: Self::default_eps(),
            weight_decay: Self::default_wd(),
            exclude_embeddings: Self::default_exclude(),
        }
    }
}

/// First and second moment estimates, one buffer per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ModelParams<T>) -> Self {
        let zeros = || {
            params
                .values
                .iter()
                .map(|m| vec![T::zero(); m.data().len()])
                .collect()
        };
        AdamState {
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }
}

/// One bias-corrected AdamW update with decoupled weight decay.
pub fn adamw_step<T: Scalar>(
    params: &mut ModelParams<T>,
    grads: &[Mat<T>],
    state: &mut AdamState<T>,
    lr: f64,
    cfg: &AdamWConfig,
) -> Result<()> {
    if !(lr.is_finite() && lr >= 0.0) {
        return Err(ForgeError::validation(format!(
            "learning rate must be finite and non-negative, got {lr}"
        )));
    }
    if grads.len() != params.values.len() || state.m.len() != params.values.len() {
        return Err(ForgeError::shape("gradient list does not match parameters"));
    }
    for ((p, g), spec) in params.values.iter().zip(grads).zip(params.layout.specs()) {
        if p.shape() != g.shape() {
            return Err(ForgeError::shape(format!(
                "gradient shape mismatch for '{}'",
                spec.name
            )));
        }
        if !g.all_finite() {
            return Err(ForgeError::Numeric(format!(
                "non-finite gradient for '{}'",
                spec.name
            )));
        }
    }

    state.step += 1;
    let (b1, b2) = cfg.betas;
    let bc1 = T::narrow(1.0 - b1.powi(state.step as i32));
    let bc2 = T::narrow(1.0 - b2.powi(state.step as i32));
    let (b1, b2) = (T::narrow(b1), T::narrow(b2));
    let eps = T::narrow(cfg.eps);
    let lr_t = T::narrow(lr);
    let decay = T::narrow(1.0 - cfg.weight_decay * lr);
    let one = T::one();

    for (i, spec) in params.layout.specs().iter().enumerate() {
        let skip_decay = cfg.exclude_embeddings && spec.kind == ParamKind::Embedding;
        let p = params.values[i].data_mut();
        let (m, v) = (&mut state.m[i], &mut state.v[i]);
        for (j, &g) in grads[i].data().iter().enumerate() {
            m[j] = b1 * m[j] + (one - b1) * g;
            v[j] = b2 * v[j] + (one - b2) * g * g;
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            if !skip_decay {
                p[j] *= decay;
            }
            p[j] -= lr_t * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}
