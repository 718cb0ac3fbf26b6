//! Reference transformer and its training utilities.
//!
//! Blocks use the reordered-norm residual form
//! `h = x + RMSNorm(Attn(x)); out = h + RMSNorm(MLP(h))`, with QK-norm,
//! rotary embeddings, grouped-query attention and a SwiGLU MLP. No
//! parameter has a bias.
//!
//! Weights are stored `in x out`, so a projection is `x @ W`.

mod checkpoint;
mod config;
mod forward;
mod gradcheck;
mod graph;
mod init;
mod loss;
mod optim;
mod tensor;
mod train;

pub use checkpoint::{
    read_checkpoint, sidecar_path, soup, write_checkpoint, Checkpoint, Tensor, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{swiglu_hidden_size, InitScheme, ModelConfig};
pub use forward::{
    attention_scores, block_forward, forward_batch, param_vars, Batch, ForwardTrace,
};
pub use gradcheck::{
    grad_check, grad_check_stencil, grad_check_with, random_batch, rel_error, GradReport,
    ParamGradError, Stencil, REL_ERROR_FLOOR,
};
pub use graph::{Graph, LossParts, Var};
pub use init::init_checkpoint;
pub use loss::{z_loss, z_loss_naive};
pub use optim::{adamw_step, AdamState, AdamWConfig};
pub use tensor::{Mat, Scalar};
pub use train::{
    packed_batches, synthetic_corpus, synthetic_mixture_stream, train_toy, Packer, StepMetrics,
    TrainConfig, TrainOutcome, MAX_TOY_D_MODEL, MAX_TOY_LAYERS,
};

use crate::{ForgeError, Result};

/// Role of a parameter, which decides its initialization and weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Embedding,
    /// Projection reading from the residual stream (q, k, v, gate, up).
    InputProj,
    /// Projection writing back to the residual stream; `layer_idx` is 1-based.
    OutputProj {
        layer_idx: usize,
    },
    NormGain,
    Unembedding,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// `(rows, cols)` of the in-memory matrix; 1-D parameters are row vectors.
    pub fn mat_shape(&self) -> (usize, usize) {
        match self.shape.as_slice() {
            [n] => (1, *n),
            [r, c] => (*r, *c),
            _ => unreachable!("parameters are 1-D or 2-D"),
        }
    }
}

/// Positions of one block's parameters within a [`ParamLayout`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BlockIdx {
    pub q_proj: usize,
    pub k_proj: usize,
    pub v_proj: usize,
    pub o_proj: usize,
    pub q_norm: usize,
    pub k_norm: usize,
    pub attn_norm: usize,
    pub gate_proj: usize,
    pub up_proj: usize,
    pub down_proj: usize,
    pub mlp_norm: usize,
}

pub const EMBED_NAME: &str = "embed.weight";

/// Ordered parameter names and shapes for a config.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamLayout {
    specs: Vec<ParamSpec>,
    pub embed: usize,
    pub blocks: Vec<BlockIdx>,
    pub final_norm: usize,
    pub unembed: usize,
}

impl ParamLayout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, kv, hd, hidden, vocab) = (
            cfg.d_model,
            cfg.kv_dim(),
            cfg.head_dim(),
            cfg.hidden(),
            cfg.vocab_size,
        );
        let mut specs = Vec::new();
        let mut add = |name: String, shape: Vec<usize>, kind: ParamKind| {
            specs.push(ParamSpec { name, shape, kind });
            specs.len() - 1
        };
        let embed = add(EMBED_NAME.into(), vec![vocab, d], ParamKind::Embedding);
        let mut blocks = Vec::with_capacity(cfg.n_layers);
        for i in 0..cfg.n_layers {
            let p = |s: &str| format!("blocks.{i}.{s}");
            let out = ParamKind::OutputProj { layer_idx: i + 1 };
            blocks.push(BlockIdx {
                q_proj: add(p("attn.q_proj"), vec![d, d], ParamKind::InputProj),
                k_proj: add(p("attn.k_proj"), vec![d, kv], ParamKind::InputProj),
                v_proj: add(p("attn.v_proj"), vec![d, kv], ParamKind::InputProj),
                o_proj: add(p("attn.o_proj"), vec![d, d], out),
                q_norm: add(p("attn.q_norm"), vec![hd], ParamKind::NormGain),
                k_norm: add(p("attn.k_norm"), vec![hd], ParamKind::NormGain),
                attn_norm: add(p("attn_norm"), vec![d], ParamKind::NormGain),
                gate_proj: add(p("mlp.gate_proj"), vec![d, hidden], ParamKind::InputProj),
                up_proj: add(p("mlp.up_proj"), vec![d, hidden], ParamKind::InputProj),
                down_proj: add(p("mlp.down_proj"), vec![hidden, d], out),
                mlp_norm: add(p("mlp_norm"), vec![d], ParamKind::NormGain),
            });
        }
        let final_norm = add("final_norm".into(), vec![d], ParamKind::NormGain);
        let unembed = add(
            "unembed.weight".into(),
            vec![d, vocab],
            ParamKind::Unembedding,
        );
        ParamLayout {
            specs,
            embed,
            blocks,
            final_norm,
            unembed,
        }
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn num_params(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.specs.iter().position(|s| s.name == name)
    }
}

/// Parameters as typed matrices in layout order.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub layout: ParamLayout,
    pub values: Vec<Mat<T>>,
}

impl<T: Scalar> ModelParams<T> {
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        ckpt.validate()?;
        let layout = ParamLayout::new(&ckpt.meta);
        let values = layout
            .specs()
            .iter()
            .map(|spec| {
                let t = &ckpt.params[spec.name.as_str()];
                let (r, c) = spec.mat_shape();
                Mat::new(r, c, t.data.iter().map(|&x| T::narrow(x as f64)).collect())
            })
            .collect();
        Ok(ModelParams {
            config: ckpt.meta.clone(),
            layout,
            values,
        })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let params = self
            .layout
            .specs()
            .iter()
            .zip(&self.values)
            .map(|(spec, m)| {
                let data = m.data().iter().map(|x| x.widen() as f32).collect();
                (spec.name.clone(), Tensor::new(spec.shape.clone(), data))
            })
            .collect();
        Checkpoint {
            params,
            meta: self.config.clone(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Mat<T>> {
        self.layout.index_of(name).map(|i| &self.values[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat<T>> {
        self.layout.index_of(name).map(move |i| &mut self.values[i])
    }

    /// Zero every sublayer projection so each block reduces to the identity.
    pub fn zero_sublayers(&mut self) {
        for b in &self.layout.blocks {
            for idx in [
                b.q_proj,
                b.k_proj,
                b.v_proj,
                b.o_proj,
                b.gate_proj,
                b.up_proj,
                b.down_proj,
            ] {
                self.values[idx].data_mut().fill(T::zero());
            }
        }
    }
}

pub(crate) fn ensure_finite<T: Scalar>(m: &Mat<T>, what: &str) -> Result<()> {
    if m.all_finite() {
        Ok(())
    } else {
        Err(ForgeError::Numeric(format!(
            "{what} contains non-finite values"
        )))
    }
}
