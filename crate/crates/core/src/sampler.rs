//! Asymmetric masked patch sampling.
//!
//! Training draws at most `M` patches per slide per iteration; inference
//! draws at most `⌊αM⌋` with `α > 1`. Patches outside the draw are simply
//! masked out (never seen), and each draw carries independent geometric
//! augmentation tags for test-time ensembling.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::PatchImage;
use crate::error::{Error, Result};

/// Caps and augmentation switches for the sampler.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    /// Training cap M.
    pub train_limit: usize,
    /// Inference multiplier α (> 1); the inference cap is ⌊α·M⌋.
    pub infer_multiplier: f64,
    /// Explicit inference cap; when set it replaces ⌊α·M⌋ (the CLI's
    /// `--infer-limit` and the sweep grid go through this).
    pub infer_limit_override: Option<usize>,
    pub augment_flips: bool,
    pub augment_rot90: bool,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig {
            train_limit: 32,
            infer_multiplier: 2.0,
            infer_limit_override: None,
            augment_flips: true,
            augment_rot90: true,
        }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_limit < 1 {
            return Err(Error::InvalidConfig("sampler train_limit must be >= 1".into()));
        }
        if !(self.infer_multiplier > 1.0) {
            return Err(Error::InvalidConfig("sampler infer_multiplier must be > 1".into()));
        }
        Ok(())
    }

    /// The effective inference cap: the override if set, else ⌊α·M⌋.
    pub fn infer_limit(&self) -> usize {
        self.infer_limit_override
            .unwrap_or_else(|| (self.infer_multiplier * self.train_limit as f64).floor() as usize)
    }
}

/// Transforms from the subgroup of the square's symmetries reachable by
/// horizontal/vertical flips and quarter turns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AugTag {
    Identity,
    HFlip,
    VFlip,
    Rot90,
    Rot180,
    Rot270,
}

/// One draw: distinct patch indices plus a transform tag per index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledSet {
    pub indices: Vec<usize>,
    pub augmentations: Vec<AugTag>,
}

fn enabled_tags(cfg: &SamplerConfig) -> Vec<AugTag> {
    let mut tags = vec![AugTag::Identity];
    if cfg.augment_flips {
        tags.push(AugTag::HFlip);
        tags.push(AugTag::VFlip);
    }
    if cfg.augment_rot90 {
        tags.push(AugTag::Rot90);
        tags.push(AugTag::Rot180);
        tags.push(AugTag::Rot270);
    }
    tags
}

fn draw(n: usize, cap: usize, cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<SampledSet> {
    if n == 0 {
        return Err(Error::EmptyPatchSet);
    }
    let m = cap.min(n);
    let mut indices = rand::seq::index::sample(rng, n, m).into_vec();
    indices.shuffle(rng);
    let tags = enabled_tags(cfg);
    let augmentations = (0..m).map(|_| tags[rng.gen_range(0..tags.len())]).collect();
    Ok(SampledSet { indices, augmentations })
}

/// Draw `min(M, n)` distinct indices, uniformly without replacement, in
/// uniformly random order.
pub fn sample_train(n: usize, cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<SampledSet> {
    draw(n, cfg.train_limit, cfg, rng)
}

/// Draw `min(⌊αM⌋, n)` distinct indices, uniformly without replacement.
pub fn sample_infer(n: usize, cfg: &SamplerConfig, rng: &mut impl Rng) -> Result<SampledSet> {
    draw(n, cfg.infer_limit(), cfg, rng)
}

/// `k` independent inference draws with independent augmentation tags.
pub fn make_vote_sets(
    n: usize,
    k: usize,
    cfg: &SamplerConfig,
    rng: &mut impl Rng,
) -> Result<Vec<SampledSet>> {
    (0..k).map(|_| sample_infer(n, cfg, rng)).collect()
}

/// Pixel-exact geometric transform. All patches are square by construction,
/// so every tag is applicable.
pub fn apply_augmentation(patch: &PatchImage, tag: AugTag) -> PatchImage {
    if tag == AugTag::Identity {
        return patch.clone();
    }
    let w = patch.size();
    let c = patch.channels();
    let mut pixels = vec![0.0f32; c * w * w];
    for ch in 0..c {
        for y in 0..w {
            for x in 0..w {
                let (sy, sx) = match tag {
                    AugTag::Identity => (y, x),
                    AugTag::HFlip => (y, w - 1 - x),
                    AugTag::VFlip => (w - 1 - y, x),
                    // Quarter turns: out(y, x) = in(source) with the source
                    // rotated the opposite way.
                    AugTag::Rot90 => (w - 1 - x, y),
                    AugTag::Rot180 => (w - 1 - y, w - 1 - x),
                    AugTag::Rot270 => (x, w - 1 - y),
                };
                pixels[ch * w * w + y * w + x] = patch.get(ch, sy, sx);
            }
        }
    }
    PatchImage::new(c, w, pixels).expect("transform preserves validity")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_rng;
    use std::collections::HashSet;

    fn cfg(m: usize, alpha: f64) -> SamplerConfig {
        SamplerConfig { train_limit: m, infer_multiplier: alpha, ..Default::default() }
    }

    #[test]
    fn train_keeps_all_when_under_cap() {
        let mut rng = derive_rng(0, "t");
        let s = sample_train(10, &cfg(32, 2.0), &mut rng).unwrap();
        let mut sorted = s.indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn train_caps_at_m() {
        let mut rng = derive_rng(0, "t");
        let s = sample_train(100, &cfg(32, 2.0), &mut rng).unwrap();
        assert_eq!(s.indices.len(), 32);
        assert_eq!(s.indices.iter().collect::<HashSet<_>>().len(), 32);
    }

    #[test]
    fn single_patch_is_forced() {
        let mut rng = derive_rng(0, "t");
        let s = sample_train(1, &cfg(32, 2.0), &mut rng).unwrap();
        assert_eq!(s.indices, vec![0]);
    }

    #[test]
    fn infer_uses_alpha_m() {
        let mut rng = derive_rng(0, "t");
        assert_eq!(sample_infer(100, &cfg(32, 2.0), &mut rng).unwrap().indices.len(), 64);
        assert_eq!(sample_infer(40, &cfg(32, 2.0), &mut rng).unwrap().indices.len(), 40);
        let s = sample_infer(64, &cfg(32, 2.0), &mut rng).unwrap();
        let mut sorted = s.indices.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn empty_patch_set_is_an_error() {
        let mut rng = derive_rng(0, "t");
        assert!(matches!(sample_train(0, &cfg(4, 2.0), &mut rng), Err(Error::EmptyPatchSet)));
    }

    #[test]
    fn index_frequency_is_uniform() {
        let mut rng = derive_rng(7, "uniformity");
        let c = cfg(5, 2.0);
        let mut counts = [0usize; 10];
        let draws = 10_000;
        for _ in 0..draws {
            for &i in &sample_train(10, &c, &mut rng).unwrap().indices {
                counts[i] += 1;
            }
        }
        for &count in &counts {
            let freq = count as f64 / draws as f64;
            assert!((freq - 0.5).abs() < 0.02, "index frequency {freq} strays from 0.5");
        }
    }

    #[test]
    fn consecutive_draws_differ() {
        let mut rng = derive_rng(3, "fresh");
        let c = cfg(8, 2.0);
        let a = sample_train(100, &c, &mut rng).unwrap();
        let b = sample_train(100, &c, &mut rng).unwrap();
        assert_ne!(a.indices, b.indices);
    }

    #[test]
    fn vote_sets_are_reproducible_and_tagged_independently() {
        let c = cfg(32, 2.0);
        let a = make_vote_sets(3, 5, &c, &mut derive_rng(11, "vote")).unwrap();
        let b = make_vote_sets(3, 5, &c, &mut derive_rng(11, "vote")).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);

        // n=3 with a huge cap: every set holds all 3 indices, but tag vectors vary.
        let mut distinct_tags = HashSet::new();
        for seed in 0..1000 {
            let sets = make_vote_sets(3, 1, &c, &mut derive_rng(seed, "vote-tags")).unwrap();
            assert_eq!(sets[0].indices.len(), 3);
            distinct_tags.insert(sets[0].augmentations.clone());
        }
        assert!(distinct_tags.len() > 1);
    }

    #[test]
    fn hflip_is_an_involution() {
        let pixels: Vec<f32> = (0..16).map(|i| i as f32 / 16.0).collect();
        let p = PatchImage::new(1, 4, pixels).unwrap();
        let back = apply_augmentation(&apply_augmentation(&p, AugTag::HFlip), AugTag::HFlip);
        assert_eq!(p, back);
    }

    #[test]
    fn four_quarter_turns_return_the_original() {
        let pixels: Vec<f32> = (0..48).map(|i| (i % 17) as f32 / 17.0).collect();
        let p = PatchImage::new(3, 4, pixels).unwrap();
        let mut q = p.clone();
        for _ in 0..4 {
            q = apply_augmentation(&q, AugTag::Rot90);
        }
        assert_eq!(p, q);
        // rot90 twice equals rot180.
        let twice = apply_augmentation(&apply_augmentation(&p, AugTag::Rot90), AugTag::Rot90);
        assert_eq!(twice, apply_augmentation(&p, AugTag::Rot180));
    }

    #[test]
    fn identity_returns_input_unchanged() {
        let p = PatchImage::new(1, 4, vec![0.25; 16]).unwrap();
        assert_eq!(apply_augmentation(&p, AugTag::Identity), p);
    }
}
