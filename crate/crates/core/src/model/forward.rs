use super::graph::{Graph, Var};
use super::tensor::{Mat, Scalar};
use super::{ensure_finite, BlockIdx, ModelConfig, ModelParams};
use crate::{ForgeError, Result};

/// Equal-length token sequences with next-token targets and a per-target
/// loss mask (`false` = excluded from the loss).
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub inputs: Vec<Vec<u32>>,
    pub targets: Vec<Vec<u32>>,
    pub mask: Vec<Vec<bool>>,
}

impl Batch {
    /// Shift each sequence by one: inputs `s[..n-1]`, targets `s[1..]`. The
    /// mask entry of a target token travels with it.
    pub fn next_token(seqs: &[Vec<u32>], token_mask: &[Vec<bool>]) -> Self {
        let mut batch = Batch {
            inputs: Vec::new(),
            targets: Vec::new(),
            mask: Vec::new(),
        };
        for (s, m) in seqs.iter().zip(token_mask) {
            batch.inputs.push(s[..s.len() - 1].to_vec());
            batch.targets.push(s[1..].to_vec());
            batch.mask.push(m[1..].to_vec());
        }
        batch
    }

    pub fn seq_len(&self) -> usize {
        self.inputs.first().map_or(0, Vec::len)
    }
}

/// Graph handles produced by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    /// Residual stream after each block, `(batch * seq_len) x d_model`.
    pub block_outputs: Vec<Var>,
    pub logits: Var,
    pub loss: Var,
}

/// Register every parameter as a leaf, in layout order.
pub fn param_vars<T: Scalar>(g: &mut Graph<T>, params: &ModelParams<T>) -> Vec<Var> {
    params.values.iter().map(|m| g.leaf(m.clone())).collect()
}

struct Attention {
    out: Var,
    /// Pre-softmax scores per (sequence, head), scaled by 1/sqrt(head_dim).
    scores: Vec<Var>,
}

fn qk_norm<T: Scalar>(g: &mut Graph<T>, cfg: &ModelConfig, x: Var, gain: Var, heads: usize) -> Var {
    let rows = g.value(x).rows();
    let hd = cfg.head_dim();
    let per_head = g.reshape(x, rows * heads, hd);
    let normed = g.rmsnorm(per_head, gain, cfg.norm_eps);
    g.reshape(normed, rows, heads * hd)
}

#[allow(clippy::too_many_arguments)]
fn attention<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    p: &[Var],
    b: &BlockIdx,
    x: Var,
    batch: usize,
    seq_len: usize,
    pos0: usize,
) -> Attention {
    let hd = cfg.head_dim();
    let group = cfg.n_heads / cfg.n_kv_heads;
    let mut q = g.matmul(x, p[b.q_proj]);
    let mut k = g.matmul(x, p[b.k_proj]);
    let v = g.matmul(x, p[b.v_proj]);

    if cfg.qk_norm && !cfg.qk_norm_after_rope {
        q = qk_norm(g, cfg, q, p[b.q_norm], cfg.n_heads);
        k = qk_norm(g, cfg, k, p[b.k_norm], cfg.n_kv_heads);
    }
    q = g.rope(q, hd, seq_len, pos0, cfg.rope_theta);
    k = g.rope(k, hd, seq_len, pos0, cfg.rope_theta);
    if cfg.qk_norm && cfg.qk_norm_after_rope {
        q = qk_norm(g, cfg, q, p[b.q_norm], cfg.n_heads);
        k = qk_norm(g, cfg, k, p[b.k_norm], cfg.n_kv_heads);
    }

    let scale = T::narrow(1.0 / (hd as f64).sqrt());
    let mut seq_outputs = Vec::with_capacity(batch);
    let mut scores = Vec::with_capacity(batch * cfg.n_heads);
    for s in 0..batch {
        let (qs, ks, vs) = if batch == 1 {
            (q, k, v)
        } else {
            (
                g.slice_rows(q, s * seq_len, seq_len),
                g.slice_rows(k, s * seq_len, seq_len),
                g.slice_rows(v, s * seq_len, seq_len),
            )
        };
        let kv_heads: Vec<(Var, Var)> = (0..cfg.n_kv_heads)
            .map(|kh| (g.slice_cols(ks, kh * hd, hd), g.slice_cols(vs, kh * hd, hd)))
            .collect();
        let mut heads = Vec::with_capacity(cfg.n_heads);
        for h in 0..cfg.n_heads {
            let (kh, vh) = kv_heads[h / group];
            let qh = g.slice_cols(qs, h * hd, hd);
            let raw = g.matmul_t(qh, kh);
            let sc = g.scale(raw, scale);
            scores.push(sc);
            let probs = g.causal_softmax(sc);
            heads.push(g.matmul(probs, vh));
        }
        seq_outputs.push(if heads.len() == 1 {
            heads[0]
        } else {
            g.concat_cols(&heads)
        });
    }
    let merged = if batch == 1 {
        seq_outputs[0]
    } else {
        g.concat_rows(&seq_outputs)
    };
    Attention {
        out: g.matmul(merged, p[b.o_proj]),
        scores,
    }
}

/// One transformer block over `(batch * seq_len) x d_model` rows.
#[allow(clippy::too_many_arguments)]
pub(crate) fn block<T: Scalar>(
    g: &mut Graph<T>,
    cfg: &ModelConfig,
    p: &[Var],
    b: &BlockIdx,
    x: Var,
    batch: usize,
    seq_len: usize,
    pos0: usize,
) -> Var {
    let attn = attention(g, cfg, p, b, x, batch, seq_len, pos0).out;
    let attn = g.rmsnorm(attn, p[b.attn_norm], cfg.norm_eps);
    let h = g.add(x, attn);

    let gate = g.matmul(h, p[b.gate_proj]);
    let up = g.matmul(h, p[b.up_proj]);
    let act = g.silu(gate);
    let act = g.mul(act, up);
    let mlp = g.matmul(act, p[b.down_proj]);
    let mlp = g.rmsnorm(mlp, p[b.mlp_norm], cfg.norm_eps);
    g.add(h, mlp)
}

/// Full forward pass and loss for a batch of equal-length sequences.
pub fn forward_batch<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    vars: &[Var],
    batch: &Batch,
) -> Result<ForwardTrace> {
    let cfg = &params.config;
    let layout = &params.layout;
    let seq_len = batch.seq_len();
    let n = batch.inputs.len();
    if n == 0 || seq_len == 0 {
        return Err(ForgeError::validation(
            "batch must contain at least one non-empty sequence",
        ));
    }
    if seq_len > cfg.max_seq_len {
        return Err(ForgeError::validation(format!(
            "sequence length {seq_len} exceeds max_seq_len {}",
            cfg.max_seq_len
        )));
    }
    let mut ids = Vec::with_capacity(n * seq_len);
    let mut targets = Vec::with_capacity(n * seq_len);
    let mut mask = Vec::with_capacity(n * seq_len);
    for ((inp, tgt), m) in batch.inputs.iter().zip(&batch.targets).zip(&batch.mask) {
        if inp.len() != seq_len || tgt.len() != seq_len || m.len() != seq_len {
            return Err(ForgeError::shape(
                "batch sequences, targets and masks must share one length",
            ));
        }
        for &t in inp.iter().chain(tgt) {
            if t as usize >= cfg.vocab_size {
                return Err(ForgeError::validation(format!(
                    "token id {t} outside vocabulary of {}",
                    cfg.vocab_size
                )));
            }
        }
        ids.extend(inp.iter().map(|&t| t as usize));
        targets.extend(tgt.iter().map(|&t| t as usize));
        mask.extend_from_slice(m);
    }

    let mut x = g.gather(vars[layout.embed], &ids);
    let mut block_outputs = Vec::with_capacity(cfg.n_layers);
    for b in &layout.blocks {
        x = block(g, cfg, vars, b, x, n, seq_len, 0);
        block_outputs.push(x);
    }
    let h = g.rmsnorm(x, vars[layout.final_norm], cfg.norm_eps);
    let logits = g.matmul(h, vars[layout.unembed]);
    let loss = g.lm_loss(logits, &targets, &mask, cfg.z_loss_weight);
    Ok(ForwardTrace {
        block_outputs,
        logits,
        loss,
    })
}

fn check_block_input<T: Scalar>(params: &ModelParams<T>, layer: usize, x: &Mat<T>) -> Result<()> {
    let cfg = &params.config;
    if layer >= cfg.n_layers {
        return Err(ForgeError::validation(format!(
            "layer {layer} out of range"
        )));
    }
    if x.cols() != cfg.d_model {
        return Err(ForgeError::shape(format!(
            "expected width {}, got {}",
            cfg.d_model,
            x.cols()
        )));
    }
    if x.rows() == 0 || x.rows() > cfg.max_seq_len {
        return Err(ForgeError::validation(format!(
            "sequence length {} outside 1..={}",
            x.rows(),
            cfg.max_seq_len
        )));
    }
    ensure_finite(x, "block input")
}

/// Apply block `layer` to each `seq_len x d_model` sequence independently.
pub fn block_forward<T: Scalar>(
    params: &ModelParams<T>,
    layer: usize,
    xs: &[Mat<T>],
) -> Result<Vec<Mat<T>>> {
    xs.iter()
        .map(|x| {
            check_block_input(params, layer, x)?;
            let mut g = Graph::new();
            let vars = param_vars(&mut g, params);
            let xv = g.leaf(x.clone());
            let out = block(
                &mut g,
                &params.config,
                &vars,
                &params.layout.blocks[layer],
                xv,
                1,
                x.rows(),
                0,
            );
            let out = g.value(out).clone();
            ensure_finite(&out, "block output")?;
            Ok(out)
        })
        .collect()
}

/// Scaled attention logits (before masking and softmax) of block `layer`
/// for each head, with the sequence placed at absolute positions
/// `pos0 .. pos0 + rows`.
pub fn attention_scores<T: Scalar>(
    params: &ModelParams<T>,
    layer: usize,
    x: &Mat<T>,
    pos0: usize,
) -> Result<Vec<Mat<T>>> {
    check_block_input(params, layer, x)?;
    let mut g = Graph::new();
    let vars = param_vars(&mut g, params);
    let xv = g.leaf(x.clone());
    let att = attention(
        &mut g,
        &params.config,
        &vars,
        &params.layout.blocks[layer],
        xv,
        1,
        x.rows(),
        pos0,
    );
    Ok(att.scores.iter().map(|&s| g.value(s).clone()).collect())
}
