//! Domain types and datasets.
//!
//! A [`WsiRecord`] is one slide: a bag of square patches, a caption, and a
//! subtype label. Real slide formats are out of scope; the [`synth`] module
//! generates classifiable procedural slides with template captions, and
//! [`store`] persists datasets as a manifest plus raw float32 patch blobs.

mod store;
mod synth;
mod vocab;

pub use store::{load_dataset, save_dataset};
pub use synth::{
    generate_synthetic, perturb_patches, vocabulary_of, SubtypeSpec, SyntheticSpec,
    MAX_CAPTION_LEN,
};
pub use vocab::{build_vocabulary, detokenize, tokenize, Vocabulary, BOS, EOS, PAD, UNK};

use crate::error::{Error, Result};

/// One square patch, pixels in `[0,1]`, channel-major layout.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchImage {
    channels: usize,
    size: usize,
    pixels: Vec<f32>,
}

impl PatchImage {
    /// `pixels` is channel-major: index `(c, y, x)` maps to `c·size² + y·size + x`.
    pub fn new(channels: usize, size: usize, pixels: Vec<f32>) -> Result<Self> {
        if size < 4 {
            return Err(Error::InvalidSpec(format!("patch size {size} < 4")));
        }
        if channels == 0 {
            return Err(Error::InvalidSpec("patch needs at least one channel".into()));
        }
        if pixels.len() != channels * size * size {
            return Err(Error::InvalidSpec(format!(
                "patch buffer has {} values, expected {}",
                pixels.len(),
                channels * size * size
            )));
        }
        if !pixels.iter().all(|p| p.is_finite() && (0.0..=1.0).contains(p)) {
            return Err(Error::InvalidSpec("patch pixels must be finite and in [0,1]".into()));
        }
        Ok(PatchImage { channels, size, pixels })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f32 {
        self.pixels[c * self.size * self.size + y * self.size + x]
    }
}

/// A token-id caption: starts with BOS, ends with EOS, no interior PAD.
///
/// `len_predicted()` is the number of supervised positions (everything after
/// BOS, including the final EOS).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Caption {
    tokens: Vec<u32>,
}

impl Caption {
    pub fn new(tokens: Vec<u32>, max_caption_len: usize) -> Result<Self> {
        if tokens.len() < 2 {
            return Err(Error::InvalidCaption("needs at least BOS and EOS".into()));
        }
        if tokens[0] != BOS {
            return Err(Error::InvalidCaption("must begin with BOS".into()));
        }
        if *tokens.last().unwrap() != EOS {
            return Err(Error::InvalidCaption("must end with EOS".into()));
        }
        if tokens[1..tokens.len() - 1].iter().any(|&t| t == PAD) {
            return Err(Error::InvalidCaption("PAD inside the caption body".into()));
        }
        if tokens.len() - 1 > max_caption_len {
            return Err(Error::InvalidCaption(format!(
                "length {} exceeds cap {max_caption_len}",
                tokens.len() - 1
            )));
        }
        Ok(Caption { tokens })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    /// Tokens strictly between BOS and EOS.
    pub fn body(&self) -> &[u32] {
        &self.tokens[1..self.tokens.len() - 1]
    }

    /// Number of supervised positions T (tokens after BOS, EOS included).
    pub fn len_predicted(&self) -> usize {
        self.tokens.len() - 1
    }
}

/// One slide: patch bag, caption, subtype label.
#[derive(Debug, Clone, PartialEq)]
pub struct WsiRecord {
    pub id: String,
    pub patches: Vec<PatchImage>,
    pub caption: Caption,
    pub caption_text: String,
    pub subtype: u32,
}

impl WsiRecord {
    pub fn validate(&self, num_subtypes: u32) -> Result<()> {
        if self.patches.is_empty() {
            return Err(Error::EmptyPatchSet);
        }
        if self.subtype >= num_subtypes {
            return Err(Error::InvalidSpec(format!(
                "record {}: subtype {} out of range [0,{num_subtypes})",
                self.id, self.subtype
            )));
        }
        Ok(())
    }
}

/// Deterministic train/holdout split: the last `floor(fraction·n)` records by
/// dataset order are held out. Returns (train, holdout) index lists.
pub fn split_records(n: usize, holdout_fraction: f64) -> (Vec<usize>, Vec<usize>) {
    let holdout = ((n as f64) * holdout_fraction).floor() as usize;
    let cut = n - holdout.min(n);
    ((0..cut).collect(), (cut..n).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn patch_rejects_bad_inputs() {
        assert!(PatchImage::new(3, 2, vec![0.0; 12]).is_err());
        assert!(PatchImage::new(3, 4, vec![0.0; 10]).is_err());
        assert!(PatchImage::new(1, 4, vec![2.0; 16]).is_err());
        assert!(PatchImage::new(1, 4, vec![f32::NAN; 16]).is_err());
        assert!(PatchImage::new(1, 4, vec![0.5; 16]).is_ok());
    }

    #[test]
    fn caption_invariants() {
        assert!(Caption::new(vec![BOS, 5, 6, EOS], 50).is_ok());
        assert!(Caption::new(vec![5, 6, EOS], 50).is_err());
        assert!(Caption::new(vec![BOS, 5, 6], 50).is_err());
        assert!(Caption::new(vec![BOS, PAD, EOS], 50).is_err());
        assert!(Caption::new(vec![BOS, 5, 6, EOS], 2).is_err());
        let c = Caption::new(vec![BOS, 5, 6, EOS], 50).unwrap();
        assert_eq!(c.len_predicted(), 3);
        assert_eq!(c.body(), &[5, 6]);
    }

    #[test]
    fn split_is_deterministic_and_disjoint() {
        let (train, held) = split_records(10, 0.2);
        assert_eq!(train, vec![0, 1, 2, 3, 4, 5, 6, 7]);
        assert_eq!(held, vec![8, 9]);
        let (train, held) = split_records(3, 0.0);
        assert_eq!(train.len(), 3);
        assert!(held.is_empty());
    }
}
