use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::forward::{forward_batch, param_vars, Batch};
use super::graph::Graph;
use super::optim::{adamw_step, AdamState, AdamWConfig};
use super::tensor::Mat;
use super::{init_checkpoint, Checkpoint, ModelConfig, ModelParams};
use crate::corpus::{repeat_loss_mask, RepeatParams, TokenDoc};
use crate::mixture::{resolve_mixture, sample_mixture, SourceDecl};
use crate::schedule::ScheduleSpec;
use crate::{ForgeError, Result};

/// Largest model `train_toy` accepts.
pub const MAX_TOY_D_MODEL: usize = 128;
pub const MAX_TOY_LAYERS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "TrainConfig::default_batch")]
    pub batch_size: usize,
    /// Tokens per training sequence (inputs); each row consumes one more
    /// token for the shifted targets.
    #[serde(default = "TrainConfig::default_seq_len")]
    pub seq_len: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub adamw: AdamWConfig,
    /// Repeat-masking parameters applied to every document before packing.
    #[serde(default)]
    pub repeat: RepeatParams,
}

impl TrainConfig {
    fn default_batch() -> usize {
        4
    }

    fn default_seq_len() -> usize {
        32
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: Self::default_batch(),
            seq_len: Self::default_seq_len(),
            seed: 0,
            adamw: AdamWConfig::default(),
            repeat: RepeatParams::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepMetrics {
    pub step: u64,
    pub loss: f64,
    pub grad_norm: f64,
    pub lr: f64,
    pub cross_entropy: f64,
    pub z_loss: f64,
    /// Target positions that contributed to the loss.
    pub positions: usize,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub metrics: Vec<StepMetrics>,
    pub checkpoint: Checkpoint,
}

/// Packs a document stream into fixed-size next-token batches, carrying the
/// repeat mask of every token along.
pub struct Packer<I> {
    docs: I,
    repeat: RepeatParams,
    batch_size: usize,
    seq_len: usize,
    tokens: Vec<u32>,
    mask: Vec<bool>,
}

impl<I: Iterator<Item = TokenDoc>> Packer<I> {
    fn row_len(&self) -> usize {
        self.seq_len + 1
    }

    pub fn next_batch(&mut self) -> Option<Batch> {
        let need = self.row_len() * self.batch_size;
        while self.tokens.len() < need {
            let doc = self.docs.next()?;
            let m = repeat_loss_mask(&doc.tokens, &self.repeat);
            self.tokens.extend_from_slice(&doc.tokens);
            self.mask.extend(m);
        }
        let rest_t = self.tokens.split_off(need);
        let rest_m = self.mask.split_off(need);
        let tokens = std::mem::replace(&mut self.tokens, rest_t);
        let mask = std::mem::replace(&mut self.mask, rest_m);
        let rows: Vec<Vec<u32>> = tokens.chunks(self.row_len()).map(<[u32]>::to_vec).collect();
        let masks: Vec<Vec<bool>> = mask.chunks(self.row_len()).map(<[bool]>::to_vec).collect();
        Some(Batch::next_token(&rows, &masks))
    }
}

impl<I: Iterator<Item = TokenDoc>> Iterator for Packer<I> {
    type Item = Batch;

    fn next(&mut self) -> Option<Batch> {
        self.next_batch()
    }
}

pub fn packed_batches<I: Iterator<Item = TokenDoc>>(
    docs: I,
    repeat: RepeatParams,
    batch_size: usize,
    seq_len: usize,
) -> Packer<I> {
    Packer {
        docs,
        repeat,
        batch_size,
        seq_len,
        tokens: Vec::new(),
        mask: Vec::new(),
    }
}

/// A small synthetic corpus of learnable documents.
///
/// `kind = "pattern"` gives modular arithmetic progressions, one document in
/// eight carrying a long run of a repeated bigram; `kind = "noise"` gives
/// uniformly random tokens.
pub fn synthetic_corpus(
    kind: &str,
    vocab_size: usize,
    n_docs: usize,
    seed: u64,
) -> Result<Vec<TokenDoc>> {
    if vocab_size < 2 {
        return Err(ForgeError::validation(
            "synthetic corpora need a vocabulary of at least 2",
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = vocab_size as u32;
    (0..n_docs)
        .map(|i| {
            let len = rng.random_range(24..96usize);
            let tokens = match kind {
                "pattern" => {
                    let start = rng.random_range(0..v);
                    let stride = rng.random_range(1..v.min(5));
                    let mut t: Vec<u32> =
                        (0..len as u32).map(|k| (start + k * stride) % v).collect();
                    if i % 8 == 0 {
                        let (a, b) = (rng.random_range(0..v), rng.random_range(0..v));
                        t.extend([a, b].repeat(40));
                    }
                    t
                }
                "noise" => (0..len).map(|_| rng.random_range(0..v)).collect(),
                other => {
                    return Err(ForgeError::validation(format!(
                        "unknown synthetic corpus kind '{other}'"
                    )))
                }
            };
            Ok(TokenDoc::new(format!("{kind}-{i}"), tokens))
        })
        .collect()
}

/// Endless interleaved stream over a 3:1 pattern/noise mixture, reshuffled
/// with a fresh seed on every pass.
pub fn synthetic_mixture_stream(
    vocab_size: usize,
    seed: u64,
) -> Result<impl Iterator<Item = TokenDoc>> {
    let pattern = synthetic_corpus("pattern", vocab_size, 192, seed)?;
    let noise = synthetic_corpus("noise", vocab_size, 64, seed.wrapping_add(1))?;
    let count = |c: &[TokenDoc]| c.iter().map(|d| d.tokens.len() as u64).sum::<u64>();
    let plan = resolve_mixture(&[
        SourceDecl::new("pattern", count(&pattern), 1.0),
        SourceDecl::new("noise", count(&noise), 1.0),
    ])?;
    let corpora = vec![pattern, noise];
    let first = sample_mixture(&plan, &corpora, seed)?;
    let mut epoch = 0u64;
    let mut current = first.into_iter();
    Ok(std::iter::from_fn(move || loop {
        if let Some(doc) = current.next() {
            return Some(doc);
        }
        epoch += 1;
        // the plan and corpora were validated by the first pass
        current = sample_mixture(&plan, &corpora, seed.wrapping_add(epoch))
            .ok()?
            .into_iter();
    }))
}

fn global_norm(grads: &[Mat<f32>]) -> f64 {
    grads.iter().map(Mat::sum_squares).sum::<f64>().sqrt()
}

/// Train the reference model on a document stream with the given schedule.
///
/// Row `s` of the metrics is the loss on batch `s` before the update made
/// with `schedule.lr_at(s + 1)`; row 0 is therefore the initial loss.
pub fn train_toy<I>(
    model: &ModelConfig,
    train: &TrainConfig,
    docs: I,
    schedule: &ScheduleSpec,
    steps: u64,
) -> Result<TrainOutcome>
where
    I: Iterator<Item = TokenDoc>,
{
    model.validate()?;
    schedule.validate()?;
    if model.d_model > MAX_TOY_D_MODEL || model.n_layers > MAX_TOY_LAYERS {
        return Err(ForgeError::validation(format!(
            "toy training supports d_model <= {MAX_TOY_D_MODEL} and n_layers <= {MAX_TOY_LAYERS}"
        )));
    }
    if train.batch_size == 0 || train.seq_len == 0 || train.seq_len > model.max_seq_len {
        return Err(ForgeError::validation(format!(
            "batch_size must be positive and seq_len within 1..={}",
            model.max_seq_len
        )));
    }

    let mut params: ModelParams<f32> =
        ModelParams::from_checkpoint(&init_checkpoint(model, train.seed)?)?;
    let mut state = AdamState::new(&params);
    let mut batches = packed_batches(docs, train.repeat, train.batch_size, train.seq_len);
    let mut metrics = Vec::with_capacity(steps as usize);

    for step in 0..steps {
        let batch = batches.next_batch().ok_or_else(|| {
            ForgeError::validation(format!("document stream exhausted at step {step}"))
        })?;
        let mut g = Graph::new();
        let vars = param_vars(&mut g, &params);
        let trace = forward_batch(&mut g, &params, &vars, &batch)?;
        let loss = g.value(trace.loss).data()[0] as f64;
        if !loss.is_finite() {
            return Err(ForgeError::Numeric(format!(
                "loss diverged to {loss} at step {step}"
            )));
        }
        g.backward(trace.loss);
        let grads: Vec<Mat<f32>> = vars
            .iter()
            .zip(&params.values)
            .map(|(&v, p)| {
                g.grad(v)
                    .cloned()
                    .unwrap_or_else(|| Mat::zeros(p.rows(), p.cols()))
            })
            .collect();
        let grad_norm = global_norm(&grads);
        if !grad_norm.is_finite() {
            return Err(ForgeError::Numeric(format!(
                "gradient norm diverged to {grad_norm} at step {step}"
            )));
        }
        let lr = schedule.lr_at(step + 1)?;
        adamw_step(&mut params, &grads, &mut state, lr, &train.adamw)?;
        let parts = g.loss_parts(trace.loss).unwrap_or_default();
        metrics.push(StepMetrics {
            step,
            loss,
            grad_norm,
            lr,
            cross_entropy: parts.cross_entropy,
            z_loss: parts.z_loss,
            positions: parts.positions,
        });
    }

    Ok(TrainOutcome {
        metrics,
        checkpoint: params.to_checkpoint(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sched() -> ScheduleSpec {
        ScheduleSpec {
            peak_lr: 1e-2,
            warmup_steps: 10,
            cosine_horizon_tokens: 100_000,
            floor_fraction: 0.1,
            truncate_at_tokens: None,
            anneal_tokens: None,
            tokens_per_step: 64,
        }
    }

    fn small_model() -> ModelConfig {
        ModelConfig::tiny(16, 1, 2, 32, 16)
    }

    fn small_train() -> TrainConfig {
        TrainConfig {
            batch_size: 4,
            seq_len: 16,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn packing_shifts_targets_and_masks() {
        let docs = vec![TokenDoc::new("a", (0..10).collect())];
        let mut p = packed_batches(docs.into_iter(), RepeatParams::new(1, 2).unwrap(), 2, 3);
        let b = p.next_batch().unwrap();
        assert_eq!(b.inputs, vec![vec![0, 1, 2], vec![4, 5, 6]]);
        assert_eq!(b.targets, vec![vec![1, 2, 3], vec![5, 6, 7]]);
        assert!(p.next_batch().is_none());

        let docs = vec![TokenDoc::new("r", vec![1, 2, 9, 9, 9, 3])];
        let mut p = packed_batches(docs.into_iter(), RepeatParams::new(1, 3).unwrap(), 1, 5);
        let b = p.next_batch().unwrap();
        assert_eq!(b.mask, vec![vec![true, false, false, false, true]]);
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let run = || {
            let stream = synthetic_mixture_stream(32, 3).unwrap();
            train_toy(&small_model(), &small_train(), stream, &sched(), 200).unwrap()
        };
        let (a, b) = (run(), run());
        assert_eq!(a.metrics, b.metrics);
        assert_eq!(a.checkpoint, b.checkpoint);
        let mean = |m: &[StepMetrics]| m.iter().map(|m| m.loss).sum::<f64>() / m.len() as f64;
        let (first, last) = (mean(&a.metrics[..20]), mean(&a.metrics[180..]));
        assert!(last < first, "{first} -> {last}");
        assert_eq!(a.metrics[0].lr, sched().lr_at(1).unwrap());
    }

    #[test]
    fn fully_masked_batches_only_decay() {
        let docs = std::iter::repeat(TokenDoc::new("r", vec![7; 40]));
        let model = small_model();
        let train = small_train();
        let out = train_toy(&model, &train, docs, &sched(), 1).unwrap();
        assert_eq!(out.metrics[0].positions, 0);
        assert_eq!(out.metrics[0].loss, 0.0);
        assert_eq!(out.metrics[0].grad_norm, 0.0);

        let init = init_checkpoint(&model, train.seed).unwrap();
        let lr = sched().lr_at(1).unwrap();
        let decay = (1.0 - 0.1 * lr) as f32;
        for (name, t) in &out.checkpoint.params {
            for (after, before) in t.data.iter().zip(&init.params[name].data) {
                let want = if name == super::super::EMBED_NAME {
                    *before
                } else {
                    before * decay
                };
                assert_eq!(*after, want, "{name}");
            }
        }
    }

    #[test]
    fn rejects_large_models_and_exhaustion() {
        let big = ModelConfig::tiny(256, 1, 4, 32, 16);
        let docs = synthetic_corpus("noise", 32, 4, 0).unwrap();
        assert!(train_toy(&big, &small_train(), docs.clone().into_iter(), &sched(), 1).is_err());
        assert!(train_toy(
            &small_model(),
            &small_train(),
            docs.into_iter(),
            &sched(),
            100
        )
        .is_err());
    }

    #[test]
    fn synthetic_kinds() {
        assert!(synthetic_corpus("other", 10, 1, 0).is_err());
        let docs = synthetic_corpus("pattern", 10, 8, 0).unwrap();
        assert!(docs.iter().all(|d| d.tokens.iter().all(|&t| t < 10)));
        assert!(docs[0].tokens.len() >= 80 + 24);
    }
}
