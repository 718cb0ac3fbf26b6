use serde::{Deserialize, Serialize};

use super::growth::growth_exponent;
use crate::model::{InitScheme, ModelConfig};
use crate::{ForgeError, Result};

/// Pearson correlation; 0 when either input has no variance.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(ForgeError::validation(
            "pearson needs two equal-length inputs of at least 2 values",
        ));
    }
    let n = x.len() as f64;
    let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx.sqrt() * syy.sqrt()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WidthScalingReport {
    pub widths: Vec<usize>,
    /// Norm of the averaged last-block activation vector at each width.
    pub activation_norms: Vec<f64>,
    /// Norm of the averaged last-block gradient vector at each width.
    pub gradient_norms: Vec<f64>,
    pub activation_corr: f64,
    pub gradient_corr: f64,
}

/// Correlate last-block activation and gradient norms at initialization with
/// `sqrt(d_model)` across `widths`. The head count of `base` is kept, so every
/// width must be divisible by it.
pub fn width_scaling_correlation(
    base: &ModelConfig,
    widths: &[usize],
    init: InitScheme,
    n_docs: usize,
    seq_len: usize,
    seed: u64,
) -> Result<WidthScalingReport> {
    if widths.len() < 3 {
        return Err(ForgeError::validation(
            "width scaling needs at least 3 widths",
        ));
    }
    let mut act = Vec::with_capacity(widths.len());
    let mut grad = Vec::with_capacity(widths.len());
    for &d in widths {
        let cfg = ModelConfig {
            d_model: d,
            hidden_size: None,
            ..base.clone()
        };
        let r = growth_exponent(&cfg, init, n_docs, seq_len, seed, seed.wrapping_add(1))?;
        act.push(r.act_norms.1);
        grad.push(r.grad_norms.1);
    }
    let root: Vec<f64> = widths.iter().map(|&d| (d as f64).sqrt()).collect();
    Ok(WidthScalingReport {
        widths: widths.to_vec(),
        activation_corr: pearson(&root, &act)?,
        gradient_corr: pearson(&root, &grad)?,
        activation_norms: act,
        gradient_norms: grad,
    })
}
