//! Whole-slide-image captioning at desk scale.
//!
//! A slide is a bag of small square patches with one caption and one subtype
//! label. The model encodes a random subsample of patches together with a
//! learnable subtype token, classifies the slide from that token, and decodes
//! the caption autoregressively with cross-attention over the encoded bag.
//! Training and inference subsample asymmetrically (cap `M` vs `⌊αM⌋`), and
//! inference can ensemble several subsamples by majority vote.
//!
//! Modules:
//! - [`data`] — domain types, vocabulary, synthetic slide generator, dataset files
//! - [`sampler`] — masked patch subsampling and geometric augmentation
//! - [`model`] — the encoder-decoder network with exact reverse-mode gradients
//! - [`training`] — AdamW loop with per-iteration resampling and checkpointing
//! - [`inference`] — greedy decoding and sampling-and-voting ensembles
//! - [`metrics`] — BLEU-4, CIDEr-D, ROUGE-L, METEOR-lite with naive reference
//!   implementations in [`metrics::oracle`]

pub mod checkpoint;
pub mod data;
pub mod error;
pub mod inference;
pub mod metrics;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
