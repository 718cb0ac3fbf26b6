use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{forward_batch, param_vars, Batch};
use super::graph::Graph;
use super::tensor::Mat;
use super::{init_checkpoint, ModelConfig, ModelParams};
use crate::{ForgeError, Result};

/// Gradients smaller than this in both estimates are compared absolutely.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamGradError {
    pub name: String,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// L2 norm of the analytic gradient.
    pub grad_norm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradReport {
    pub max_rel_error: f64,
    pub loss: f64,
    pub perturbation: f64,
    pub n_checked: usize,
    pub params: Vec<ParamGradError>,
}

impl GradReport {
    pub fn param(&self, name: &str) -> Option<&ParamGradError> {
        self.params.iter().find(|p| p.name == name)
    }
}

pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn loss_of(params: &ModelParams<f64>, batch: &Batch) -> Result<f64> {
    let mut g = Graph::new();
    let vars = param_vars(&mut g, params);
    let trace = forward_batch(&mut g, params, &vars, batch)?;
    Ok(g.value(trace.loss).data()[0])
}

/// Finite-difference formula used for the numeric derivative.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`, truncation error O(h^2).
    Central,
    /// Five-point central difference, truncation error O(h^4).
    #[default]
    FivePoint,
}

/// Compare analytic gradients of the full loss against five-point central
/// differences for every scalar parameter.
pub fn grad_check_with(
    params: &ModelParams<f64>,
    batch: &Batch,
    perturbation: f64,
) -> Result<GradReport> {
    grad_check_stencil(params, batch, perturbation, Stencil::FivePoint)
}

pub fn grad_check_stencil(
    params: &ModelParams<f64>,
    batch: &Batch,
    perturbation: f64,
    stencil: Stencil,
) -> Result<GradReport> {
    if !(perturbation > 0.0 && perturbation.is_finite()) {
        return Err(ForgeError::validation(
            "perturbation must be positive and finite",
        ));
    }
    let mut g = Graph::new();
    let vars = param_vars(&mut g, params);
    let trace = forward_batch(&mut g, params, &vars, batch)?;
    let loss = g.value(trace.loss).data()[0];
    g.backward(trace.loss);
    let analytic: Vec<Mat<f64>> = vars
        .iter()
        .zip(&params.values)
        .map(|(&v, p)| {
            g.grad(v)
                .cloned()
                .unwrap_or_else(|| Mat::zeros(p.rows(), p.cols()))
        })
        .collect();

    let mut work = params.clone();
    let mut reports = Vec::with_capacity(params.values.len());
    let mut n_checked = 0;
    for (idx, spec) in params.layout.specs().iter().enumerate() {
        let mut worst_rel = 0.0f64;
        let mut worst_abs = 0.0f64;
        for k in 0..params.values[idx].data().len() {
            let orig = params.values[idx].data()[k];
            let mut at = |offset: f64| -> Result<f64> {
                work.values[idx].data_mut()[k] = orig + offset;
                loss_of(&work, batch)
            };
            let h = perturbation;
            let numeric = match stencil {
                Stencil::Central => (at(h)? - at(-h)?) / (2.0 * h),
                Stencil::FivePoint => {
                    (8.0 * (at(h)? - at(-h)?) - (at(2.0 * h)? - at(-2.0 * h)?)) / (12.0 * h)
                }
            };
            work.values[idx].data_mut()[k] = orig;
            let a = analytic[idx].data()[k];
            worst_rel = worst_rel.max(rel_error(a, numeric));
            worst_abs = worst_abs.max((a - numeric).abs());
            n_checked += 1;
        }
        reports.push(ParamGradError {
            name: spec.name.clone(),
            max_rel_error: worst_rel,
            max_abs_error: worst_abs,
            grad_norm: analytic[idx].sum_squares().sqrt(),
        });
    }
    Ok(GradReport {
        max_rel_error: reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max),
        loss,
        perturbation,
        n_checked,
        params: reports,
    })
}

/// Random two-sequence batch of `config.max_seq_len` tokens each, with one
/// masked target per sequence.
pub fn random_batch(config: &ModelConfig, seed: u64) -> Batch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x6772_6164);
    let v = config.vocab_size as u32;
    let n = config.max_seq_len + 1;
    let seqs: Vec<Vec<u32>> = (0..2)
        .map(|_| (0..n).map(|_| rng.random_range(0..v)).collect())
        .collect();
    let masks: Vec<Vec<bool>> = (0..2)
        .map(|_| {
            let hole = rng.random_range(1..n);
            (0..n).map(|i| i != hole || n == 2).collect()
        })
        .collect();
    Batch::next_token(&seqs, &masks)
}

/// Gradient check of `config` initialized from `seed` on a random batch.
pub fn grad_check(config: &ModelConfig, seed: u64, perturbation: f64) -> Result<GradReport> {
    config.validate()?;
    let ckpt = init_checkpoint(config, seed)?;
    let params = ModelParams::<f64>::from_checkpoint(&ckpt)?;
    grad_check_with(&params, &random_batch(config, seed), perturbation)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            n_kv_heads: 1,
            init: super::super::InitScheme::Scaled0424,
            ..ModelConfig::tiny(8, 2, 2, 11, 5)
        }
    }

    #[test]
    fn small_model_passes() {
        let r = grad_check(&cfg(), 1, 1e-4).unwrap();
        assert!(r.max_rel_error < 1e-4, "{:#?}", r.params);
        assert_eq!(r.n_checked, cfg().num_params());
        for name in ["blocks.0.attn.q_norm", "blocks.1.attn.k_norm"] {
            assert!(r.param(name).unwrap().grad_norm > 0.0, "{name}");
        }
    }

    #[test]
    fn plain_cross_entropy() {
        let c = ModelConfig {
            z_loss_weight: 0.0,
            ..cfg()
        };
        assert!(grad_check(&c, 2, 1e-4).unwrap().max_rel_error < 1e-4);
    }

    #[test]
    fn central_difference_converges() {
        let c = cfg();
        let p = ModelParams::<f64>::from_checkpoint(&init_checkpoint(&c, 3).unwrap()).unwrap();
        let b = random_batch(&c, 3);
        let coarse = grad_check_stencil(&p, &b, 1e-3, Stencil::Central).unwrap();
        let fine = grad_check_stencil(&p, &b, 1e-4, Stencil::Central).unwrap();
        let worst = |r: &GradReport| r.params.iter().map(|p| p.max_abs_error).fold(0.0, f64::max);
        assert!(worst(&fine) < worst(&coarse) / 20.0);
    }

    #[test]
    fn bad_perturbation() {
        assert!(grad_check(&cfg(), 0, 0.0).is_err());
    }

    #[test]
    fn rel_error_floor() {
        assert_eq!(rel_error(0.0, 0.0), 0.0);
        assert_eq!(rel_error(1.0, 0.5), 0.5);
    }
}
