//! The captioning network.
//!
//! A small strided-conv embedder maps each patch to R^d; the encoder runs
//! pre-norm transformer blocks over `[subtype token ∥ patch rows]` with no
//! patch positions; a linear head classifies the encoded subtype token; the
//! decoder generates the caption with causal self-attention and
//! cross-attention over all encoder states. `backward` produces exact
//! reverse-mode gradients for every named parameter, verified against
//! central finite differences by [`check_gradients`].

mod gradcheck;
mod net;
mod ops;
mod params;

pub use gradcheck::{check_gradients, GradCheckReport};
pub use params::{Gradients, ModelParams};

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Caption, PatchImage, BOS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Embedding width d; must be divisible by `heads`.
    pub embed_dim: usize,
    pub heads: usize,
    pub enc_layers: usize,
    pub dec_layers: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    /// Number of subtype classes K.
    pub num_subtypes: usize,
    pub max_caption_len: usize,
    pub dropout_rate: f64,
    pub patch_channels: usize,
    /// Channel widths of the three conv stages in the patch embedder.
    pub embed_channels: [usize; 3],
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            embed_dim: 128,
            heads: 4,
            enc_layers: 2,
            dec_layers: 2,
            ff_dim: 256,
            vocab_size: 5,
            num_subtypes: 2,
            max_caption_len: 50,
            dropout_rate: 0.1,
            patch_channels: 3,
            embed_channels: [8, 16, 32],
        }
    }
}

impl ModelConfig {
    /// Tiny configuration for gradient checks and fast tests.
    pub fn micro(vocab_size: usize, num_subtypes: usize) -> Self {
        ModelConfig {
            embed_dim: 8,
            heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ff_dim: 16,
            vocab_size,
            num_subtypes,
            max_caption_len: 16,
            dropout_rate: 0.0,
            patch_channels: 3,
            embed_channels: [2, 3, 4],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.embed_dim == 0 || self.embed_dim % self.heads != 0 {
            return bad(format!(
                "embed_dim {} must be a positive multiple of heads {}",
                self.embed_dim, self.heads
            ));
        }
        if self.enc_layers < 1 || self.dec_layers < 1 {
            return bad("layer counts must be >= 1".into());
        }
        if self.vocab_size < 5 {
            return bad(format!("vocab_size {} < 5 (reserved ids + 1)", self.vocab_size));
        }
        if self.num_subtypes < 2 {
            return bad("num_subtypes must be >= 2".into());
        }
        if self.max_caption_len < 2 {
            return bad("max_caption_len must be >= 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0,1)", self.dropout_rate));
        }
        if self.patch_channels == 0 || self.embed_channels.iter().any(|&c| c == 0) {
            return bad("channel counts must be positive".into());
        }
        Ok(())
    }
}

/// One training example: the sampled (and augmented) patches of a slide plus
/// its caption and subtype.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub patches: Vec<PatchImage>,
    pub caption: Caption,
    pub subtype: u32,
}

impl TrainSample {
    /// Gather a sampled set out of a record, applying its augmentation tags.
    pub fn gather(record: &crate::data::WsiRecord, set: &crate::sampler::SampledSet) -> Self {
        let patches = set
            .indices
            .iter()
            .zip(&set.augmentations)
            .map(|(&i, &tag)| crate::sampler::apply_augmentation(&record.patches[i], tag))
            .collect();
        TrainSample { patches, caption: record.caption.clone(), subtype: record.subtype }
    }
}

/// Teacher-forced network outputs.
#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// `(m+1) × d`; row 0 is the encoded subtype token.
    pub encoder_states: Tensor,
    pub subtype_logits: Vec<f64>,
    /// `T × vocab`; row `t` predicts caption token `t + 1`.
    pub caption_logits: Tensor,
}

/// Joint loss and its two terms (`total = caption + β · subtype`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub total: f64,
    pub caption: f64,
    pub subtype: f64,
}

/// Map each patch independently to a d-dimensional row.
pub fn embed_patches(patches: &[PatchImage], params: &ModelParams) -> Result<Tensor> {
    net::embedder_forward(patches, params).map(|(rows, _)| rows)
}

/// Prepend the subtype token and run the encoder stack (dropout off).
pub fn encode(patch_embeds: &Tensor, params: &ModelParams) -> Result<Tensor> {
    if patch_embeds.shape().len() != 2 || patch_embeds.cols() != params.config().embed_dim {
        return Err(Error::ShapeMismatch {
            name: "patch_embeds".into(),
            expected: vec![patch_embeds.rows(), params.config().embed_dim],
            got: patch_embeds.shape().to_vec(),
        });
    }
    if patch_embeds.rows() == 0 {
        return Err(Error::EmptyPatchSet);
    }
    Ok(net::encoder_forward(patch_embeds, params, &mut None).0)
}

/// Subtype logits read off the encoded subtype token (row 0).
pub fn predict_subtype(encoder_states: &Tensor, params: &ModelParams) -> Vec<f64> {
    net::subtype_forward(encoder_states, params)
}

/// Next-token logits for a BOS-prefixed partial caption.
pub fn decode_step(
    prefix: &[u32],
    encoder_states: &Tensor,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    if prefix.first() != Some(&BOS) {
        return Err(Error::InvalidCaption("decode prefix must start with BOS".into()));
    }
    if prefix.len() >= params.config().max_caption_len {
        return Err(Error::InvalidCaption(format!(
            "decode prefix of {} tokens reaches max_caption_len {}",
            prefix.len(),
            params.config().max_caption_len
        )));
    }
    let (logits, _) = net::decoder_forward(prefix, encoder_states, params, &mut None)?;
    Ok(logits.row(logits.rows() - 1).to_vec())
}

/// Full teacher-forced pass with dropout off; deterministic.
pub fn forward(sample: &TrainSample, params: &ModelParams) -> Result<ForwardOutput> {
    net::forward_full(sample, params, None).map(|(out, _)| out)
}

/// Equal to `caption CE (mean over non-PAD targets) + β · subtype CE`.
pub fn loss(
    output: &ForwardOutput,
    target: &Caption,
    subtype: u32,
    beta: f64,
) -> Result<LossBreakdown> {
    if beta < 0.0 {
        return Err(Error::InvalidConfig(format!("beta {beta} must be >= 0")));
    }
    let targets = &target.tokens()[1..];
    if targets.len() != output.caption_logits.rows() {
        return Err(Error::ShapeMismatch {
            name: "caption_logits".into(),
            expected: vec![targets.len(), output.caption_logits.cols()],
            got: output.caption_logits.shape().to_vec(),
        });
    }
    let (caption, _) = net::caption_ce(&output.caption_logits, targets)?;
    let (subtype_loss, _) = net::subtype_ce(&output.subtype_logits, subtype);
    Ok(LossBreakdown { total: caption + beta * subtype_loss, caption, subtype: subtype_loss })
}

/// Reverse-mode gradients of the joint loss for every named parameter.
/// Supplying `dropout_rng` turns dropout on; the same masks are used by the
/// internal forward and the backward sweep.
pub fn backward(
    sample: &TrainSample,
    params: &ModelParams,
    beta: f64,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(LossBreakdown, Gradients)> {
    if beta < 0.0 {
        return Err(Error::InvalidConfig(format!("beta {beta} must be >= 0")));
    }
    net::backward_full(sample, params, beta, dropout_rng).map(|(l, _, g)| (l, g))
}

/// Per-token and subtype cross-entropies exposed for direct use.
pub fn token_cross_entropy(logits: &Tensor, targets: &[u32]) -> Result<f64> {
    net::caption_ce(logits, targets).map(|(l, _)| l)
}

pub fn subtype_cross_entropy(logits: &[f64], label: u32) -> f64 {
    net::subtype_ce(logits, label).0
}
