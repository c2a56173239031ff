#![allow(dead_code)]

use ame_core::data::Sample;
use ame_core::model::{patchify, ModelConfig, Task, Visible};
use ame_core::rng::{stream, Purpose, Rng};
use ame_core::Tensor;
use rand::seq::index::sample as pick_indices;
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    stream(seed, Purpose::Test, 0)
}

pub fn random_image(c: usize, h: usize, w: usize, rng: &mut Rng) -> Tensor<f32> {
    Tensor::new([c, h, w], (0..c * h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
}

pub fn random_sample(cfg: &ModelConfig, name: &str, rng: &mut Rng) -> Sample {
    let image = random_image(cfg.channels, cfg.image_h, cfg.image_w, rng);
    let (label, mask) = match cfg.task {
        Task::Reconstruction => (None, None),
        Task::Classification { num_classes } => (Some(rng.random_range(0..num_classes)), None),
        Task::Segmentation { num_classes } => {
            let m = (0..cfg.image_h * cfg.image_w)
                .map(|_| rng.random_range(0..num_classes) as u16)
                .collect();
            (None, Some(m))
        }
    };
    Sample {
        name: name.to_string(),
        image,
        label,
        mask,
    }
}

/// 16 patches of 4×4 gray pixels, every width at most 16.
pub fn tiny() -> ModelConfig {
    ModelConfig {
        image_h: 16,
        image_w: 16,
        patch_size: 4,
        channels: 1,
        enc_layers: 2,
        enc_dim: 16,
        enc_heads: 2,
        dec_layers: 2,
        dec_dim: 8,
        dec_heads: 2,
        mlp_ratio: 2,
        ..ModelConfig::desk()
    }
}

/// A random subset of the sample's patches, in random order.
pub fn random_visible(cfg: &ModelConfig, image: &Tensor<f32>, rng: &mut Rng) -> (Visible<f64>, Vec<bool>) {
    let n = cfg.num_patches();
    let t = rng.random_range(0..=n);
    let positions = pick_indices(rng, n, t).into_vec();
    let all = patchify(&image.cast::<f64>(), cfg.patch_size).unwrap();
    let mut known = vec![false; n];
    for &p in &positions {
        known[p] = true;
    }
    (Visible::select(&all, &positions).unwrap(), known)
}
