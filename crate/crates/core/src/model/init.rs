use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Checkpoint, InitScheme, ModelConfig, ParamKind, ParamLayout, Tensor};
use crate::Result;

const STANDARD_STD: f64 = 0.02;

fn init_std(scheme: InitScheme, kind: ParamKind, d_model: usize) -> f64 {
    let d = d_model as f64;
    match (scheme, kind) {
        (InitScheme::Standard002, _) => STANDARD_STD,
        (InitScheme::Scaled0424, ParamKind::OutputProj { layer_idx }) => {
            1.0 / (2.0 * d * layer_idx as f64).sqrt()
        }
        (InitScheme::Scaled0424, _) => 1.0 / d.sqrt(),
    }
}

/// Draw a fresh checkpoint. Norm gains start at one; every weight matrix is
/// sampled according to `cfg.init`. Parameters are drawn in layout order
/// from a single seeded stream.
pub fn init_checkpoint(cfg: &ModelConfig, seed: u64) -> Result<Checkpoint> {
    cfg.validate()?;
    let cfg = cfg.resolved();
    let layout = ParamLayout::new(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let params = layout
        .specs()
        .iter()
        .map(|spec| {
            let data = if spec.kind == ParamKind::NormGain {
                vec![1.0f32; spec.numel()]
            } else {
                let std = init_std(cfg.init, spec.kind, cfg.d_model);
                (0..spec.numel())
                    .map(|_| {
                        let z: f64 = StandardNormal.sample(&mut rng);
                        (z * std) as f32
                    })
                    .collect()
            };
            (spec.name.clone(), Tensor::new(spec.shape.clone(), data))
        })
        .collect();
    Ok(Checkpoint { params, meta: cfg })
}
