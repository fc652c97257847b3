//! Named parameter store.
//!
//! Every learnable array lives in one ordered name → tensor map, so the
//! optimizer, the checkpoint writer, and the gradient checker all walk the
//! same stable list. The decoder's sinusoidal position table is derived from
//! the config and is not a parameter.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::rng::derive_rng;
use crate::tensor::Tensor;
use rand::Rng;

/// All learnable tensors plus the derived position table.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    tensors: IndexMap<String, Tensor>,
    pos_table: Tensor,
}

fn attention_entries(prefix: &str, d: usize) -> Vec<(String, Vec<usize>, usize)> {
    let mut out = Vec::new();
    for part in ["q", "k", "v", "o"] {
        out.push((format!("{prefix}.w{part}"), vec![d, d], d));
        out.push((format!("{prefix}.b{part}"), vec![d], 0));
    }
    out
}

fn layer_norm_entries(prefix: &str, d: usize) -> Vec<(String, Vec<usize>, usize)> {
    vec![(format!("{prefix}.g"), vec![d], usize::MAX), (format!("{prefix}.b"), vec![d], 0)]
}

fn ff_entries(prefix: &str, d: usize, ff: usize) -> Vec<(String, Vec<usize>, usize)> {
    vec![
        (format!("{prefix}.w1"), vec![ff, d], d),
        (format!("{prefix}.b1"), vec![ff], 0),
        (format!("{prefix}.w2"), vec![d, ff], ff),
        (format!("{prefix}.b2"), vec![d], 0),
    ]
}

/// `(name, shape, fan_in)`; fan_in 0 means zero-init, `usize::MAX` means ones.
fn entry_list(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let d = cfg.embed_dim;
    let [c1, c2, c3] = cfg.embed_channels;
    let mut entries = vec![
        ("embed.conv0.w".into(), vec![c1, cfg.patch_channels, 3, 3], cfg.patch_channels * 9),
        ("embed.conv0.b".into(), vec![c1], 0),
        ("embed.conv1.w".into(), vec![c2, c1, 3, 3], c1 * 9),
        ("embed.conv1.b".into(), vec![c2], 0),
        ("embed.conv2.w".into(), vec![c3, c2, 3, 3], c2 * 9),
        ("embed.conv2.b".into(), vec![c3], 0),
        ("embed.proj.w".into(), vec![d, c3], c3),
        ("embed.proj.b".into(), vec![d], 0),
        ("subtype_token".into(), vec![d], d),
        ("tok_embed.w".into(), vec![cfg.vocab_size, d], d),
    ];
    for i in 0..cfg.enc_layers {
        entries.extend(layer_norm_entries(&format!("enc.{i}.ln1"), d));
        entries.extend(attention_entries(&format!("enc.{i}.attn"), d));
        entries.extend(layer_norm_entries(&format!("enc.{i}.ln2"), d));
        entries.extend(ff_entries(&format!("enc.{i}.ff"), d, cfg.ff_dim));
    }
    entries.extend(layer_norm_entries("enc.final_ln", d));
    for i in 0..cfg.dec_layers {
        entries.extend(layer_norm_entries(&format!("dec.{i}.ln1"), d));
        entries.extend(attention_entries(&format!("dec.{i}.self"), d));
        entries.extend(layer_norm_entries(&format!("dec.{i}.ln2"), d));
        entries.extend(attention_entries(&format!("dec.{i}.cross"), d));
        entries.extend(layer_norm_entries(&format!("dec.{i}.ln3"), d));
        entries.extend(ff_entries(&format!("dec.{i}.ff"), d, cfg.ff_dim));
    }
    entries.extend(layer_norm_entries("dec.final_ln", d));
    entries.push(("subtype_head.w".into(), vec![cfg.num_subtypes, d], d));
    entries.push(("subtype_head.b".into(), vec![cfg.num_subtypes], 0));
    entries.push(("out_proj.w".into(), vec![cfg.vocab_size, d], d));
    entries.push(("out_proj.b".into(), vec![cfg.vocab_size], 0));
    entries
}

fn sinusoidal_table(max_len: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[max_len, d]);
    for p in 0..max_len {
        let row = t.row_mut(p);
        for i in 0..d {
            let exponent = 2.0 * (i / 2) as f64 / d as f64;
            let angle = p as f64 / 10000f64.powf(exponent);
            row[i] = if i % 2 == 0 { angle.sin() } else { angle.cos() };
        }
    }
    t
}

impl ModelParams {
    /// Seeded init: uniform ±1/√fan_in per tensor, each tensor drawn from its
    /// own name-keyed stream so values do not depend on construction order.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut tensors = IndexMap::new();
        for (name, shape, fan_in) in entry_list(config) {
            let mut tensor = Tensor::zeros(&shape);
            match fan_in {
                0 => {}
                usize::MAX => tensor.data_mut().fill(1.0),
                fan_in => {
                    let bound = 1.0 / (fan_in as f64).sqrt();
                    let mut rng = derive_rng(seed, &format!("init/{name}"));
                    for v in tensor.data_mut() {
                        *v = rng.gen_range(-bound..bound);
                    }
                }
            }
            tensors.insert(name, tensor);
        }
        let pos_table = sinusoidal_table(config.max_caption_len, config.embed_dim);
        Ok(ModelParams { config: config.clone(), tensors, pos_table })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn pos_table(&self) -> &Tensor {
        &self.pos_table
    }

    pub fn get(&self, name: &str) -> &Tensor {
        self.tensors.get(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors.get_mut(name).unwrap_or_else(|| panic!("unknown parameter `{name}`"))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor)> {
        self.tensors.iter_mut().map(|(n, t)| (n.as_str(), t))
    }

    pub fn num_tensors(&self) -> usize {
        self.tensors.len()
    }

    pub fn num_values(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (name, t) in self.iter() {
            t.ensure_finite(name)?;
        }
        Ok(())
    }
}

/// Gradient arrays mirroring [`ModelParams`] by name.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    tensors: IndexMap<String, Tensor>,
}

impl Gradients {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let tensors =
            params.iter().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape()))).collect();
        Gradients { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Tensor {
        self.tensors.get_mut(name).unwrap_or_else(|| panic!("unknown gradient `{name}`"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.tensors.iter().map(|(n, t)| (n.as_str(), t))
    }

    /// Elementwise `self += other`.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (name, t) in &mut self.tensors {
            t.add_assign(&other.tensors[name]);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for t in self.tensors.values_mut() {
            t.scale(c);
        }
    }

    /// Error naming the first parameter with a non-finite gradient.
    pub fn ensure_finite(&self) -> Result<()> {
        for (name, t) in &self.tensors {
            if !t.is_finite() {
                return Err(Error::NonFiniteGradient(name.clone()));
            }
        }
        Ok(())
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors.values().map(Tensor::sq_norm).sum::<f64>().sqrt()
    }
}
