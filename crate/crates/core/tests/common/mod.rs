//! Shared fixtures for integration tests.

use rand::Rng;
use sgmt_core::data::{Caption, PatchImage, BOS, EOS};
use sgmt_core::model::{ModelConfig, ModelParams, TrainSample};
use sgmt_core::rng::derive_rng;

pub fn random_patches(count: usize, channels: usize, size: usize, tag: &str) -> Vec<PatchImage> {
    let mut rng = derive_rng(1234, tag);
    (0..count)
        .map(|_| {
            let pixels = (0..channels * size * size).map(|_| rng.gen_range(0.0..1.0)).collect();
            PatchImage::new(channels, size, pixels).unwrap()
        })
        .collect()
}

pub fn random_caption(body_len: usize, vocab_size: usize, tag: &str) -> Caption {
    let mut rng = derive_rng(4321, tag);
    let mut tokens = vec![BOS];
    for _ in 0..body_len {
        tokens.push(rng.gen_range(4..vocab_size as u32));
    }
    tokens.push(EOS);
    Caption::new(tokens, 50).unwrap()
}

/// The micro configuration used for gradient checks: d=8, 1+1 layers,
/// 2 heads, vocab 11, K=3, m=3 patches, T=4 predicted positions.
pub fn micro_setup(seed: u64) -> (ModelConfig, ModelParams, TrainSample) {
    let cfg = ModelConfig::micro(11, 3);
    let params = ModelParams::init(&cfg, seed).unwrap();
    let sample = TrainSample {
        patches: random_patches(3, cfg.patch_channels, 4, &format!("micro-patches-{seed}")),
        caption: random_caption(3, cfg.vocab_size, &format!("micro-caption-{seed}")),
        subtype: 1,
    };
    (cfg, params, sample)
}
