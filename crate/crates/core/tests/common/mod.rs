#![allow(dead_code)]

use forge_core::corpus::RepeatSpan;
use forge_core::model::{
    attention_scores, block_forward, forward_batch, init_checkpoint, param_vars, Batch, Checkpoint,
    Graph, Mat, ModelConfig, ModelParams, Scalar,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Every `(start, n)` whose n-gram repeats back-to-back at least
/// `min_count` times and cannot be pushed one token further left.
pub fn ngram_oracle(tokens: &[u32], n_max: usize, min_count: usize) -> Vec<RepeatSpan> {
    let mut out = Vec::new();
    for start in 0..tokens.len() {
        for n in 1..=n_max {
            if start + n > tokens.len() {
                break;
            }
            let gram = &tokens[start..start + n];
            let mut count = 1;
            while start + (count + 1) * n <= tokens.len()
                && &tokens[start + count * n..start + (count + 1) * n] == gram
            {
                count += 1;
            }
            let left_open = start == 0 || tokens[start - 1] != tokens[start - 1 + n];
            if count >= min_count && left_open {
                out.push(RepeatSpan {
                    start,
                    end: start + n * count,
                    n,
                    count,
                });
            }
        }
    }
    out
}

pub fn mask_from_spans(len: usize, spans: &[RepeatSpan]) -> Vec<bool> {
    (0..len)
        .map(|i| !spans.iter().any(|s| s.start <= i && i < s.end))
        .collect()
}

/// Token sequence with planted back-to-back repeats.
pub fn repeat_heavy_sequence(rng: &mut impl Rng, max_len: usize, alphabet: u32) -> Vec<u32> {
    let target = rng.random_range(0..=max_len);
    let mut t = Vec::with_capacity(target);
    while t.len() < target {
        if rng.random_bool(0.5) {
            let n = rng.random_range(1..=6);
            let gram: Vec<u32> = (0..n).map(|_| rng.random_range(0..alphabet)).collect();
            for _ in 0..rng.random_range(1..=12) {
                t.extend_from_slice(&gram);
            }
        } else {
            for _ in 0..rng.random_range(1..=8) {
                t.push(rng.random_range(0..alphabet));
            }
        }
    }
    t.truncate(target);
    t
}

/// Flagged indices by direct evaluation of every window.
pub fn spike_oracle(series: &[f64], window: usize, sigma: f64) -> Vec<usize> {
    (window..series.len())
        .filter(|&i| {
            let w = &series[i - window..i];
            let mean = w.iter().sum::<f64>() / window as f64;
            let var = w.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / window as f64;
            let std = var.sqrt();
            if std == 0.0 {
                series[i] != mean
            } else {
                (series[i] - mean).abs() >= sigma * std
            }
        })
        .collect()
}

/// Random series mixing noise, plateaus, small integers and planted spikes.
pub fn random_series(rng: &mut impl Rng, max_len: usize) -> (Vec<f64>, usize) {
    let window = rng.random_range(1..=max_len.min(1000) / 2);
    let len = rng.random_range(window + 1..=max_len);
    let style = rng.random_range(0..4);
    let mut s: Vec<f64> = (0..len)
        .map(|i| match style {
            0 => normal(rng),
            1 => rng.random_range(0..3) as f64,
            2 => {
                if (i / 50) % 2 == 0 {
                    5.0
                } else {
                    rng.random_range(0..2) as f64
                }
            }
            _ => (i as f64 * 0.01).sin() * 3.0 + 0.01 * normal(rng),
        })
        .collect();
    for _ in 0..rng.random_range(0..10) {
        let i = rng.random_range(0..len);
        s[i] += rng.random_range(-100.0..100.0);
    }
    (s, window)
}

pub fn soup_oracle(cs: &[Checkpoint]) -> Vec<(String, Vec<f64>)> {
    cs[0]
        .params
        .iter()
        .map(|(name, t)| {
            let mean = (0..t.data.len())
                .map(|i| {
                    cs.iter()
                        .map(|c| c.params[name].data[i] as f64)
                        .sum::<f64>()
                        / cs.len() as f64
                })
                .collect();
            (name.clone(), mean)
        })
        .collect()
}

pub fn params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> ModelParams<T> {
    ModelParams::from_checkpoint(&init_checkpoint(cfg, seed).unwrap()).unwrap()
}

pub fn random_mat<T: Scalar>(rows: usize, cols: usize, seed: u64) -> Mat<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Mat::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| T::narrow(StandardNormal.sample(&mut rng)))
            .collect(),
    )
}

pub fn logits<T: Scalar>(p: &ModelParams<T>, batch: &Batch) -> Mat<T> {
    let mut g = Graph::new();
    let vars = param_vars(&mut g, p);
    let trace = forward_batch(&mut g, p, &vars, batch).unwrap();
    g.value(trace.logits).clone()
}

pub fn single_batch(tokens: &[u32]) -> Batch {
    Batch::next_token(&[tokens.to_vec()], &[vec![true; tokens.len()]])
}

/// Zeroed sublayers turn every block into the identity.
pub fn check_residual_identity(cfg: &ModelConfig, seed: u64) -> Result<(), String> {
    let mut p: ModelParams<f32> = params(cfg, seed);
    p.zero_sublayers();
    let x = random_mat::<f32>(cfg.max_seq_len, cfg.d_model, seed + 1);
    for layer in 0..cfg.n_layers {
        let y = block_forward(&p, layer, std::slice::from_ref(&x)).map_err(|e| e.to_string())?;
        if y[0] != x {
            return Err(format!("block {layer} is not the identity"));
        }
    }
    Ok(())
}

/// Changing a later token leaves every earlier position bit-identical, both
/// per block and for the full model.
pub fn check_causality(cfg: &ModelConfig, seed: u64) -> Result<(), String> {
    let p: ModelParams<f32> = params(cfg, seed);
    let t = cfg.max_seq_len;
    let x = random_mat::<f32>(t, cfg.d_model, seed + 2);
    let base =
        block_forward(&p, 0, std::slice::from_ref(&x)).map_err(|e| e.to_string())?[0].clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for changed in 1..t {
        let mut x2 = x.clone();
        for v in x2.row_mut(changed) {
            *v += rng.random_range(-3.0..3.0f32);
        }
        let y = block_forward(&p, 0, &[x2]).map_err(|e| e.to_string())?[0].clone();
        for r in 0..changed {
            if y.row(r) != base.row(r) {
                return Err(format!(
                    "block output at {r} moved when position {changed} changed"
                ));
            }
        }
        if y.row(changed) == base.row(changed) {
            return Err(format!(
                "perturbing position {changed} had no effect on itself"
            ));
        }
    }

    let tokens: Vec<u32> = (0..=t)
        .map(|_| rng.random_range(0..cfg.vocab_size as u32))
        .collect();
    let base = logits(&p, &single_batch(&tokens));
    for changed in 1..t {
        let mut tok2 = tokens.clone();
        tok2[changed] = (tok2[changed] + 1) % cfg.vocab_size as u32;
        let l = logits(&p, &single_batch(&tok2));
        for r in 0..changed {
            if l.row(r) != base.row(r) {
                return Err(format!("logits at {r} moved when token {changed} changed"));
            }
        }
    }
    Ok(())
}

/// A grouped-query model equals the multi-head model whose key/value heads
/// are the shared heads copied out to every query head.
pub fn check_gqa_equals_mha(cfg: &ModelConfig, seed: u64) -> Result<(), String> {
    let gqa: ModelParams<f32> = params(cfg, seed);
    let mha_cfg = ModelConfig {
        n_kv_heads: cfg.n_heads,
        ..cfg.clone()
    };
    let mut mha: ModelParams<f32> = params(&mha_cfg, seed);
    let hd = cfg.head_dim();
    let group = cfg.n_heads / cfg.n_kv_heads;
    for (name, value) in gqa.layout.specs().iter().map(|s| &s.name).zip(&gqa.values) {
        let target = mha.get_mut(name).ok_or_else(|| format!("missing {name}"))?;
        if name.ends_with("k_proj") || name.ends_with("v_proj") {
            for r in 0..cfg.d_model {
                for h in 0..cfg.n_heads {
                    let src = &value.row(r)[(h / group) * hd..(h / group + 1) * hd];
                    target.row_mut(r)[h * hd..(h + 1) * hd].copy_from_slice(src);
                }
            }
        } else {
            *target = value.clone();
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seqs: Vec<Vec<u32>> = (0..3)
        .map(|_| {
            (0..=cfg.max_seq_len)
                .map(|_| rng.random_range(0..cfg.vocab_size as u32))
                .collect()
        })
        .collect();
    let masks = vec![vec![true; cfg.max_seq_len + 1]; 3];
    let batch = Batch::next_token(&seqs, &masks);
    if logits(&gqa, &batch) != logits(&mha, &batch) {
        return Err("grouped-query and expanded multi-head logits differ".into());
    }
    Ok(())
}

/// With QK-norm off, shifting all positions by `shift` leaves the attention
/// logits unchanged up to `tol`.
pub fn check_rope_shift(
    cfg: &ModelConfig,
    seed: u64,
    shifts: &[usize],
    tol: f64,
) -> Result<f64, String> {
    let cfg = ModelConfig {
        qk_norm: false,
        ..cfg.clone()
    };
    let p: ModelParams<f64> = params(&cfg, seed);
    let x = random_mat::<f64>(cfg.max_seq_len, cfg.d_model, seed + 3);
    let base = attention_scores(&p, 0, &x, 0).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for &s in shifts {
        let moved = attention_scores(&p, 0, &x, s).map_err(|e| e.to_string())?;
        for (a, b) in base.iter().zip(&moved) {
            for (u, v) in a.data().iter().zip(b.data()) {
                worst = worst.max((u - v).abs());
            }
        }
    }
    if worst <= tol {
        Ok(worst)
    } else {
        Err(format!(
            "attention logits moved by {worst:e} under a position shift"
        ))
    }
}

pub fn normal(rng: &mut impl Rng) -> f64 {
    StandardNormal.sample(rng)
}
