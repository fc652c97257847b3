//! Run configuration file: JSON with a top-level `seed` and optional
//! sections. Unknown keys anywhere fail fast with the offending key path.
//! Precedence is flags > file > defaults, and every random stream derives
//! from the top-level seed via named sub-streams (data/train/vote).

use std::path::{Path, PathBuf};

use serde::Deserialize;
use sgmt_core::data::SyntheticSpec;
use sgmt_core::inference::{TieBreak, VoteConfig};
use sgmt_core::model::ModelConfig;
use sgmt_core::rng::derive_seed;
use sgmt_core::sampler::SamplerConfig;
use sgmt_core::training::TrainConfig;

use crate::error::{CliError, Result};

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSection {
    pub num_slides: Option<usize>,
    pub subtypes: Option<usize>,
    pub patches_per_slide: Option<[usize; 2]>,
    pub patch_size: Option<usize>,
    pub channels: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub embed_dim: Option<usize>,
    pub heads: Option<usize>,
    pub enc_layers: Option<usize>,
    pub dec_layers: Option<usize>,
    pub ff_dim: Option<usize>,
    pub max_caption_len: Option<usize>,
    pub dropout_rate: Option<f64>,
    pub embed_channels: Option<[usize; 3]>,
    pub vocab_size: Option<usize>,
    pub num_subtypes: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: Option<f64>,
    pub weight_decay: Option<f64>,
    pub beta: Option<f64>,
    pub epochs: Option<usize>,
    pub batch_size: Option<usize>,
    pub train_limit: Option<usize>,
    pub grad_clip_norm: Option<f64>,
    pub eval_every: Option<usize>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplerSection {
    pub train_limit: Option<usize>,
    pub infer_multiplier: Option<f64>,
    pub infer_limit: Option<usize>,
    pub augment_flips: Option<bool>,
    pub augment_rot90: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VoteSection {
    pub k: Option<usize>,
    pub tie_break: Option<TieBreak>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathsSection {
    pub dataset_dir: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Default)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub sampler: SamplerSection,
    pub vote: VoteSection,
    pub paths: PathsSection,
}

fn section<T: for<'de> Deserialize<'de> + Default>(
    map: &serde_json::Map<String, serde_json::Value>,
    key: &str,
) -> Result<T> {
    match map.get(key) {
        None => Ok(T::default()),
        Some(value) => serde_json::from_value(value.clone())
            .map_err(|e| CliError::Config(format!("config key `{key}`: {e}"))),
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(RunConfig { seed: 0, ..Default::default() });
        };
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read config `{}`: {e}", path.display())))?;
        let value: serde_json::Value = serde_json::from_str(&raw)
            .map_err(|e| CliError::Config(format!("config `{}`: {e}", path.display())))?;
        let map = value
            .as_object()
            .ok_or_else(|| CliError::Config("config root must be a JSON object".into()))?;

        const KNOWN: [&str; 7] = ["seed", "data", "model", "train", "sampler", "vote", "paths"];
        for key in map.keys() {
            if !KNOWN.contains(&key.as_str()) {
                return Err(CliError::Config(format!("unknown config key `{key}`")));
            }
        }
        let seed = match map.get("seed") {
            None => 0,
            Some(v) => v
                .as_u64()
                .ok_or_else(|| CliError::Config("config key `seed`: must be an unsigned integer".into()))?,
        };
        Ok(RunConfig {
            seed,
            data: section(map, "data")?,
            model: section(map, "model")?,
            train: section(map, "train")?,
            sampler: section(map, "sampler")?,
            vote: section(map, "vote")?,
            paths: section(map, "paths")?,
        })
    }

    /// Synthetic dataset recipe; the generator seed is the `data` sub-stream.
    pub fn synthetic_spec(&self) -> Result<SyntheticSpec> {
        let d = &self.data;
        let mut spec = SyntheticSpec::with_defaults(
            d.subtypes.unwrap_or(4),
            d.num_slides.unwrap_or(200),
            derive_seed(self.seed, "data"),
        )
        .map_err(CliError::from)?;
        if let Some([lo, hi]) = d.patches_per_slide {
            spec.patches_per_slide = (lo, hi);
        }
        if let Some(w) = d.patch_size {
            spec.patch_size = w;
        }
        if let Some(c) = d.channels {
            spec.channels = c;
        }
        spec.validate().map_err(CliError::from)?;
        Ok(spec)
    }

    /// Model configuration with vocab/subtype counts taken from the dataset
    /// unless pinned in the file (a pinned mismatch is an error).
    pub fn model_config(&self, vocab_size: usize, num_subtypes: usize) -> Result<ModelConfig> {
        let m = &self.model;
        if let Some(v) = m.vocab_size {
            if v != vocab_size {
                return Err(CliError::Data(format!(
                    "config pins vocab_size {v} but the dataset vocabulary has {vocab_size} entries"
                )));
            }
        }
        if let Some(k) = m.num_subtypes {
            if k != num_subtypes {
                return Err(CliError::Data(format!(
                    "config pins num_subtypes {k} but the dataset has {num_subtypes} subtypes"
                )));
            }
        }
        let default = ModelConfig::default();
        let cfg = ModelConfig {
            embed_dim: m.embed_dim.unwrap_or(default.embed_dim),
            heads: m.heads.unwrap_or(default.heads),
            enc_layers: m.enc_layers.unwrap_or(default.enc_layers),
            dec_layers: m.dec_layers.unwrap_or(default.dec_layers),
            ff_dim: m.ff_dim.unwrap_or(default.ff_dim),
            vocab_size,
            num_subtypes,
            max_caption_len: m.max_caption_len.unwrap_or(default.max_caption_len),
            dropout_rate: m.dropout_rate.unwrap_or(default.dropout_rate),
            patch_channels: self.data.channels.unwrap_or(default.patch_channels),
            embed_channels: m.embed_channels.unwrap_or(default.embed_channels),
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    /// Training profile resolution: profile defaults, then file overrides.
    /// The train seed is the `train` sub-stream of the top-level seed.
    pub fn train_config(&self, profile: &str) -> Result<TrainConfig> {
        let seed = derive_seed(self.seed, "train");
        let base = match profile {
            "desk" => TrainConfig::desk(seed),
            "paper" => TrainConfig::paper(seed),
            other => {
                return Err(CliError::Config(format!(
                    "unknown profile `{other}` (expected `desk` or `paper`)"
                )))
            }
        };
        let t = &self.train;
        let cfg = TrainConfig {
            learning_rate: t.learning_rate.unwrap_or(base.learning_rate),
            weight_decay: t.weight_decay.unwrap_or(base.weight_decay),
            beta: t.beta.unwrap_or(base.beta),
            epochs: t.epochs.unwrap_or(base.epochs),
            batch_size: t.batch_size.unwrap_or(base.batch_size),
            train_limit: t.train_limit.unwrap_or(base.train_limit),
            seed,
            grad_clip_norm: t.grad_clip_norm.or(base.grad_clip_norm),
            eval_every: t.eval_every.unwrap_or(base.eval_every),
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    pub fn sampler_config(&self) -> Result<SamplerConfig> {
        let s = &self.sampler;
        let default = SamplerConfig::default();
        let cfg = SamplerConfig {
            train_limit: s.train_limit.unwrap_or(default.train_limit),
            infer_multiplier: s.infer_multiplier.unwrap_or(default.infer_multiplier),
            infer_limit_override: s.infer_limit,
            augment_flips: s.augment_flips.unwrap_or(default.augment_flips),
            augment_rot90: s.augment_rot90.unwrap_or(default.augment_rot90),
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }

    /// Vote settings; the vote seed is the `vote` sub-stream.
    pub fn vote_config(&self) -> Result<VoteConfig> {
        let cfg = VoteConfig {
            k: self.vote.k.unwrap_or(5),
            tie_break: self.vote.tie_break.unwrap_or_default(),
            seed: derive_seed(self.seed, "vote"),
        };
        cfg.validate().map_err(CliError::from)?;
        Ok(cfg)
    }
}

/// Fixed-point formatting with round-half-even, for report and CSV output.
pub fn fmt4(x: f64) -> String {
    let scaled = (x * 10_000.0).round_ties_even();
    let total = scaled as i64;
    let (sign, total) = if total < 0 { ("-", -total) } else { ("", total) };
    format!("{sign}{}.{:04}", total / 10_000, total % 10_000)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fmt4_rounds_half_to_even() {
        // Scaled values land exactly on .5 ties: 2.5 -> 2 (even), 3.5 -> 4.
        assert_eq!(fmt4(0.00025), "0.0002");
        assert_eq!(fmt4(0.00035), "0.0004");
        assert_eq!(fmt4(1.0), "1.0000");
        assert_eq!(fmt4(0.25), "0.2500");
        assert_eq!(fmt4(10.0), "10.0000");
        assert_eq!(fmt4(-0.00025), "-0.0002");
    }

    #[test]
    fn unknown_top_level_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 1, "bogus": {}}"#).unwrap();
        let err = RunConfig::load(Some(&path)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        assert!(err.to_string().contains("bogus"));
    }

    #[test]
    fn unknown_section_key_is_rejected_with_path() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"train": {"lr": 0.1}}"#).unwrap();
        let err = RunConfig::load(Some(&path)).unwrap_err();
        assert_eq!(err.exit_code(), 2);
        let msg = err.to_string();
        assert!(msg.contains("train") && msg.contains("lr"), "message was: {msg}");
    }
}
