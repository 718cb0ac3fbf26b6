use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::model::{
    forward_batch, init_checkpoint, param_vars, Batch, Graph, InitScheme, ModelConfig, ModelParams,
};
use crate::{ForgeError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub lambda_act: f64,
    pub lambda_grad: f64,
    pub n_layers: usize,
    pub n_docs: usize,
    /// Norms of the averaged first- and last-block activation vectors.
    pub act_norms: (f64, f64),
    /// Norms of the averaged first- and last-block gradient vectors.
    pub grad_norms: (f64, f64),
}

/// `(1 / n_layers) * ln(|last| / |first|)`.
pub fn growth_from_vectors(first: &[f64], last: &[f64], n_layers: usize) -> Result<f64> {
    if n_layers == 0 {
        return Err(ForgeError::validation("n_layers must be positive"));
    }
    if first.len() != last.len() {
        return Err(ForgeError::shape("growth vectors differ in length"));
    }
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    Ok((norm(last) / norm(first)).ln() / n_layers as f64)
}

/// `n_docs` uniformly random documents of `seq_len + 1` tokens.
pub fn random_docs(vocab_size: usize, n_docs: usize, seq_len: usize, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n_docs)
        .map(|_| {
            (0..=seq_len)
                .map(|_| rng.random_range(0..vocab_size as u32))
                .collect()
        })
        .collect()
}

fn column_means(rows: usize, cols: usize, data: &[f32]) -> Vec<f64> {
    let mut v = vec![0.0f64; cols];
    for r in 0..rows {
        for (acc, &x) in v.iter_mut().zip(&data[r * cols..(r + 1) * cols]) {
            *acc += x as f64;
        }
    }
    v.iter_mut().for_each(|x| *x /= rows as f64);
    v
}

/// Growth exponents of an existing model on the given documents.
///
/// Activations are the outputs of the first and last blocks; gradients are
/// those of the mean training loss with respect to the same tensors. Each is
/// averaged over documents and positions into one `d_model` vector before
/// taking its norm.
pub fn growth_of_params(params: &ModelParams<f32>, docs: &[Vec<u32>]) -> Result<GrowthReport> {
    let cfg = &params.config;
    if cfg.n_layers < 2 {
        return Err(ForgeError::validation(
            "growth exponent needs at least 2 layers",
        ));
    }
    if docs.is_empty() {
        return Err(ForgeError::validation(
            "growth exponent needs at least one document",
        ));
    }
    let masks: Vec<Vec<bool>> = docs.iter().map(|d| vec![true; d.len()]).collect();
    let batch = Batch::next_token(docs, &masks);
    let mut g = Graph::new();
    let vars = param_vars(&mut g, params);
    let trace = forward_batch(&mut g, params, &vars, &batch)?;
    g.backward(trace.loss);

    let (first, last) = (
        trace.block_outputs[0],
        trace.block_outputs[cfg.n_layers - 1],
    );
    let mean_of = |m: &crate::model::Mat<f32>| column_means(m.rows(), m.cols(), m.data());
    let (a0, a1) = (mean_of(g.value(first)), mean_of(g.value(last)));
    let zeros = crate::model::Mat::zeros(0, 0);
    let (g0, g1) = (
        mean_of(g.grad(first).unwrap_or(&zeros)),
        mean_of(g.grad(last).unwrap_or(&zeros)),
    );
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let report = GrowthReport {
        lambda_act: growth_from_vectors(&a0, &a1, cfg.n_layers)?,
        lambda_grad: growth_from_vectors(&g0, &g1, cfg.n_layers)?,
        n_layers: cfg.n_layers,
        n_docs: docs.len(),
        act_norms: (norm(&a0), norm(&a1)),
        grad_norms: (norm(&g0), norm(&g1)),
    };
    if !(report.lambda_act.is_finite() && report.lambda_grad.is_finite()) {
        return Err(ForgeError::Numeric(format!(
            "growth exponent is not finite (act norms {:?}, grad norms {:?})",
            report.act_norms, report.grad_norms
        )));
    }
    Ok(report)
}

/// Growth exponents at initialization under `init`, from `n_docs` random
/// documents. `init_seed` drives the weights and `doc_seed` the documents.
pub fn growth_exponent(
    config: &ModelConfig,
    init: InitScheme,
    n_docs: usize,
    seq_len: usize,
    init_seed: u64,
    doc_seed: u64,
) -> Result<GrowthReport> {
    let cfg = ModelConfig {
        init,
        ..config.clone()
    };
    cfg.validate()?;
    if cfg.n_layers < 2 {
        return Err(ForgeError::validation(
            "growth exponent needs at least 2 layers",
        ));
    }
    if n_docs == 0 || seq_len == 0 || seq_len > cfg.max_seq_len {
        return Err(ForgeError::validation(format!(
            "need n_docs >= 1 and seq_len within 1..={}",
            cfg.max_seq_len
        )));
    }
    let params = ModelParams::from_checkpoint(&init_checkpoint(&cfg, init_seed)?)?;
    growth_of_params(
        &params,
        &random_docs(cfg.vocab_size, n_docs, seq_len, doc_seed),
    )
}
