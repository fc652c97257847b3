//! Caption generation: greedy decoding plus the random-sampling-and-voting
//! test-time ensemble.
//!
//! Each ensemble member draws an independent masked patch subset with its own
//! augmentation tags, decodes greedily, and the modal caption wins (ties go
//! to the lexicographically smallest detokenized string).

use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Caption, Vocabulary, WsiRecord, BOS, EOS, PAD};
use crate::error::{Error, Result};
use crate::model::{decode_step, embed_patches, encode, predict_subtype, ModelParams, TrainSample};
use crate::rng::derive_rng;
use crate::sampler::{sample_infer, SamplerConfig};
use crate::tensor::Tensor;

/// Tie-break rule for voting. Only the lexicographic rule exists; the tag is
/// kept explicit so config files state it.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TieBreak {
    #[default]
    Lexicographic,
}

/// Ensemble size and seed for sampling-and-voting inference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VoteConfig {
    pub k: usize,
    pub tie_break: TieBreak,
    pub seed: u64,
}

impl Default for VoteConfig {
    fn default() -> Self {
        VoteConfig { k: 5, tie_break: TieBreak::Lexicographic, seed: 0 }
    }
}

impl VoteConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 1 {
            return Err(Error::InvalidConfig("vote k must be >= 1".into()));
        }
        Ok(())
    }
}

/// One decoded caption with its subtype prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptionResult {
    pub caption: Caption,
    pub subtype: u32,
}

/// Voting outcome, with the individual member results kept for inspection.
#[derive(Debug, Clone, PartialEq)]
pub struct VotedCaption {
    pub caption: Caption,
    pub subtype: u32,
    pub votes: Vec<CaptionResult>,
}

fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Greedy autoregressive decode from BOS. Structural ids (PAD, BOS) are never
/// emitted; generation stops at EOS or after `max_len` tokens, appending EOS
/// if the cap was hit. Deterministic given the states.
pub fn greedy_decode(
    encoder_states: &Tensor,
    params: &ModelParams,
    max_len: usize,
) -> Result<Caption> {
    let cap = max_len.min(params.config().max_caption_len);
    let mut prefix = vec![BOS];
    while prefix.len() < cap {
        let logits = decode_step(&prefix, encoder_states, params)?;
        // Skip PAD and BOS; ties go to the smallest eligible id.
        let next = (EOS as usize) + argmax(&logits[EOS as usize..]);
        prefix.push(next as u32);
        if next as u32 == EOS {
            break;
        }
    }
    if *prefix.last().unwrap() != EOS {
        prefix.push(EOS);
    }
    Caption::new(prefix, params.config().max_caption_len)
}

/// One inference draw: masked subsample → encode → greedy decode, plus the
/// argmax subtype.
pub fn caption_once(
    record: &WsiRecord,
    params: &ModelParams,
    sampler_cfg: &SamplerConfig,
    rng: &mut ChaCha8Rng,
) -> Result<CaptionResult> {
    let set = sample_infer(record.patches.len(), sampler_cfg, rng)?;
    let sample = TrainSample::gather(record, &set);
    let embeds = embed_patches(&sample.patches, params)?;
    let states = encode(&embeds, params)?;
    let subtype = argmax(&predict_subtype(&states, params)) as u32;
    let caption = greedy_decode(&states, params, params.config().max_caption_len)?;
    Ok(CaptionResult { caption, subtype })
}

fn strip_body(caption: &Caption) -> Vec<u32> {
    caption.body().iter().copied().filter(|&t| t != PAD).collect()
}

/// Modal caption under exact token-sequence equality of the stripped bodies;
/// ties break on the lexicographically smallest detokenized string.
pub fn vote(captions: &[Caption], vocab: &Vocabulary) -> Result<Caption> {
    if captions.is_empty() {
        return Err(Error::EmptyVote);
    }
    let mut counts: HashMap<Vec<u32>, usize> = HashMap::new();
    for caption in captions {
        *counts.entry(strip_body(caption)).or_insert(0) += 1;
    }
    let winner = counts
        .iter()
        .min_by(|(body_a, count_a), (body_b, count_b)| {
            count_b.cmp(count_a).then_with(|| {
                let text = |body: &[u32]| {
                    body.iter()
                        .map(|&id| vocab.decode_id(id).unwrap_or("<unk>").to_string())
                        .collect::<Vec<_>>()
                        .join(" ")
                };
                text(body_a).cmp(&text(body_b))
            })
        })
        .map(|(body, _)| body.clone())
        .unwrap();
    let mut tokens = vec![BOS];
    tokens.extend(winner);
    tokens.push(EOS);
    Caption::new(tokens, tokens_cap(captions))
}

fn tokens_cap(captions: &[Caption]) -> usize {
    captions.iter().map(|c| c.len_predicted()).max().unwrap_or(2).max(2)
}

/// `k` independent draws with fresh augmentations, combined by [`vote`]; the
/// subtype is the modal member prediction (ties to the smallest class).
pub fn caption_with_voting(
    record: &WsiRecord,
    params: &ModelParams,
    sampler_cfg: &SamplerConfig,
    vote_cfg: &VoteConfig,
    vocab: &Vocabulary,
) -> Result<VotedCaption> {
    vote_cfg.validate()?;
    let mut votes = Vec::with_capacity(vote_cfg.k);
    for i in 0..vote_cfg.k {
        let mut rng = derive_rng(vote_cfg.seed, &format!("vote/{i}"));
        votes.push(caption_once(record, params, sampler_cfg, &mut rng)?);
    }
    let captions: Vec<Caption> = votes.iter().map(|v| v.caption.clone()).collect();
    let caption = vote(&captions, vocab)?;

    let mut class_counts: HashMap<u32, usize> = HashMap::new();
    for v in &votes {
        *class_counts.entry(v.subtype).or_insert(0) += 1;
    }
    let subtype = class_counts
        .iter()
        .min_by(|(class_a, count_a), (class_b, count_b)| {
            count_b.cmp(count_a).then(class_a.cmp(class_b))
        })
        .map(|(class, _)| *class)
        .unwrap();
    Ok(VotedCaption { caption, subtype, votes })
}
