//! Optimization loop: AdamW with decoupled weight decay, a fresh masked
//! patch draw per slide per iteration, and per-step loss logging.
//!
//! Everything is deterministic given (dataset, configs, seed): slide-level
//! gradients may be computed in parallel, but they are reduced in slide
//! order, and every random draw comes from a stream keyed by
//! (epoch, step, slide id) rather than by scheduling.

use indexmap::IndexMap;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::WsiRecord;
use crate::error::{Error, Result};
use crate::inference::greedy_decode;
use crate::model::{
    backward, embed_patches, encode, forward, loss, Gradients, ModelConfig, ModelParams,
    TrainSample,
};
use crate::rng::derive_rng;
use crate::sampler::{sample_infer, sample_train, SamplerConfig};
use crate::tensor::Tensor;

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Weight β of the subtype loss.
    pub beta: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Training patch cap M; overrides the sampler's cap during training.
    pub train_limit: usize,
    pub seed: u64,
    pub grad_clip_norm: Option<f64>,
    /// Every this many steps, log mean holdout loss (0 = off).
    pub eval_every: usize,
}

impl TrainConfig {
    /// Desk-scale profile: from-scratch micro model, larger learning rate.
    pub fn desk(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 3e-4,
            weight_decay: 1e-2,
            beta: 1.0,
            epochs: 30,
            batch_size: 8,
            train_limit: 32,
            seed,
            grad_clip_norm: None,
            eval_every: 0,
        }
    }

    /// Hyperparameters for fine-tuning-scale runs: lr 1e-5, batch 2,
    /// 40 epochs, last epoch kept.
    pub fn paper(seed: u64) -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            weight_decay: 1e-2,
            beta: 1.0,
            epochs: 40,
            batch_size: 2,
            train_limit: 32,
            seed,
            grad_clip_norm: None,
            eval_every: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig("learning_rate must be > 0".into()));
        }
        if self.epochs < 1 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::InvalidConfig("batch_size must be >= 1".into()));
        }
        if self.train_limit < 1 {
            return Err(Error::InvalidConfig("train_limit must be >= 1".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::InvalidConfig("beta must be >= 0".into()));
        }
        Ok(())
    }
}

/// First/second Adam moment accumulators, mirroring the parameter names.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamMoments {
    pub m: IndexMap<String, Tensor>,
    pub v: IndexMap<String, Tensor>,
}

impl AdamMoments {
    pub fn zeros_like(params: &ModelParams) -> Self {
        let zeros = |_: &str| -> IndexMap<String, Tensor> {
            params.iter().map(|(n, t)| (n.to_string(), Tensor::zeros(t.shape()))).collect()
        };
        AdamMoments { m: zeros("m"), v: zeros("v") }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossRow {
    pub step: u64,
    pub loss: f64,
    pub caption_loss: f64,
    pub subtype_loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalRow {
    pub step: u64,
    pub holdout_loss: f64,
}

/// Everything the loop mutates: parameters, moments, counters, history.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub params: ModelParams,
    pub moments: AdamMoments,
    pub step: u64,
    pub epochs_done: usize,
    pub loss_history: Vec<LossRow>,
    pub eval_history: Vec<EvalRow>,
}

impl TrainState {
    pub fn new(params: ModelParams) -> Self {
        let moments = AdamMoments::zeros_like(&params);
        TrainState {
            params,
            moments,
            step: 0,
            epochs_done: 0,
            loss_history: Vec::new(),
            eval_history: Vec::new(),
        }
    }
}

/// One AdamW update: decoupled decay `w *= 1 − lr·wd`, then the
/// bias-corrected Adam step. Gradients must cover every parameter.
pub fn optimizer_step(state: &mut TrainState, grads: &Gradients, cfg: &TrainConfig) -> Result<()> {
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - ADAM_BETA1.powi(t);
    let bc2 = 1.0 - ADAM_BETA2.powi(t);
    let decay = 1.0 - cfg.learning_rate * cfg.weight_decay;

    let TrainState { params, moments, .. } = state;
    for (name, w) in params.iter_mut() {
        let g = grads.get(name).ok_or_else(|| Error::MissingGradient(name.to_string()))?;
        let m = moments.m.get_mut(name).expect("moments mirror params");
        let v = moments.v.get_mut(name).expect("moments mirror params");
        let (wd, md, vd, gd) = (w.data_mut(), m.data_mut(), v.data_mut(), g.data());
        for i in 0..wd.len() {
            md[i] = ADAM_BETA1 * md[i] + (1.0 - ADAM_BETA1) * gd[i];
            vd[i] = ADAM_BETA2 * vd[i] + (1.0 - ADAM_BETA2) * gd[i] * gd[i];
            let m_hat = md[i] / bc1;
            let v_hat = vd[i] / bc2;
            wd[i] = wd[i] * decay - cfg.learning_rate * m_hat / (v_hat.sqrt() + ADAM_EPS);
        }
    }
    Ok(())
}

pub struct TrainOptions<'a> {
    /// Continue a previous run instead of starting from a fresh init.
    pub resume: Option<TrainState>,
    /// Held-out records for periodic loss logging (`eval_every`).
    pub holdout: Option<&'a [WsiRecord]>,
}

impl Default for TrainOptions<'_> {
    fn default() -> Self {
        TrainOptions { resume: None, holdout: None }
    }
}

/// Train on `records`. Per epoch the slide order is reshuffled; per slide per
/// iteration a fresh masked draw is taken. Returns the final state — the last
/// epoch's weights, with no best-model selection.
pub fn train(
    records: &[WsiRecord],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    sampler_cfg: &SamplerConfig,
    options: TrainOptions,
) -> Result<TrainState> {
    cfg.validate()?;
    model_cfg.validate()?;
    if records.is_empty() {
        return Err(Error::InvalidSpec("empty training set".into()));
    }
    let train_sampler = SamplerConfig { train_limit: cfg.train_limit, ..*sampler_cfg };

    let mut state = match options.resume {
        Some(state) => state,
        None => TrainState::new(ModelParams::init(model_cfg, cfg.seed)?),
    };

    for epoch in state.epochs_done..cfg.epochs {
        let mut order: Vec<usize> = (0..records.len()).collect();
        {
            use rand::seq::SliceRandom;
            let mut rng = derive_rng(cfg.seed, &format!("train/epoch{epoch}/shuffle"));
            order.shuffle(&mut rng);
        }
        for batch in order.chunks(cfg.batch_size) {
            let step = state.step + 1;
            let results: Vec<Result<_>> = batch
                .par_iter()
                .map(|&ri| {
                    let record = &records[ri];
                    let mut rng = derive_rng(
                        cfg.seed,
                        &format!("train/epoch{epoch}/step{step}/slide/{}", record.id),
                    );
                    let set = sample_train(record.patches.len(), &train_sampler, &mut rng)?;
                    let sample = TrainSample::gather(record, &set);
                    backward(&sample, &state.params, cfg.beta, Some(&mut rng))
                })
                .collect();

            let mut grads: Option<Gradients> = None;
            let mut mean = LossRow { step, loss: 0.0, caption_loss: 0.0, subtype_loss: 0.0 };
            for result in results {
                let (breakdown, slide_grads) = result?;
                mean.loss += breakdown.total;
                mean.caption_loss += breakdown.caption;
                mean.subtype_loss += breakdown.subtype;
                match grads.as_mut() {
                    Some(acc) => acc.accumulate(&slide_grads),
                    None => grads = Some(slide_grads),
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut grads = grads.expect("non-empty batch");
            grads.scale(scale);
            mean.loss *= scale;
            mean.caption_loss *= scale;
            mean.subtype_loss *= scale;

            if !mean.loss.is_finite() {
                return Err(Error::NonFiniteLoss { step });
            }
            grads.ensure_finite()?;
            if let Some(max_norm) = cfg.grad_clip_norm {
                let norm = grads.global_norm();
                if norm > max_norm {
                    grads.scale(max_norm / norm);
                }
            }
            optimizer_step(&mut state, &grads, cfg)?;
            state.loss_history.push(mean);

            if cfg.eval_every > 0 && state.step % cfg.eval_every as u64 == 0 {
                if let Some(holdout) = options.holdout {
                    let holdout_loss =
                        holdout_mean_loss(holdout, &state.params, cfg, sampler_cfg)?;
                    state.eval_history.push(EvalRow { step: state.step, holdout_loss });
                }
            }
        }
        state.epochs_done = epoch + 1;
    }
    state.params.ensure_finite()?;
    Ok(state)
}

fn holdout_mean_loss(
    holdout: &[WsiRecord],
    params: &ModelParams,
    cfg: &TrainConfig,
    sampler_cfg: &SamplerConfig,
) -> Result<f64> {
    if holdout.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    for record in holdout {
        let mut rng = derive_rng(cfg.seed, &format!("train/eval/slide/{}", record.id));
        let set = sample_infer(record.patches.len(), sampler_cfg, &mut rng)?;
        let sample = TrainSample::gather(record, &set);
        let out = forward(&sample, params)?;
        total += loss(&out, &sample.caption, sample.subtype, cfg.beta)?.total;
    }
    Ok(total / holdout.len() as f64)
}

#[derive(Debug, Clone)]
pub struct OverfitOutcome {
    /// Optimizer steps taken before the caption was reproduced.
    pub steps_taken: usize,
    pub memorized: bool,
    pub state: TrainState,
}

/// Sanity harness: train on a single slide until greedy decoding reproduces
/// its caption exactly, or `step_cap` is hit (reported, not an error).
pub fn overfit_one(
    record: &WsiRecord,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    sampler_cfg: &SamplerConfig,
    step_cap: usize,
    init: Option<ModelParams>,
) -> Result<OverfitOutcome> {
    cfg.validate()?;
    let train_sampler = SamplerConfig { train_limit: cfg.train_limit, ..*sampler_cfg };
    let params = match init {
        Some(p) => p,
        None => ModelParams::init(model_cfg, cfg.seed)?,
    };
    let mut state = TrainState::new(params);

    for step in 0..=step_cap {
        let embeds = embed_patches(&record.patches, &state.params)?;
        let states = encode(&embeds, &state.params)?;
        let decoded =
            greedy_decode(&states, &state.params, state.params.config().max_caption_len)?;
        if decoded.tokens() == record.caption.tokens() {
            return Ok(OverfitOutcome { steps_taken: step, memorized: true, state });
        }
        if step == step_cap {
            break;
        }
        let mut rng = derive_rng(cfg.seed, &format!("overfit/step{step}/slide/{}", record.id));
        let set = sample_train(record.patches.len(), &train_sampler, &mut rng)?;
        let sample = TrainSample::gather(record, &set);
        let (_, mut grads) = backward(&sample, &state.params, cfg.beta, Some(&mut rng))?;
        grads.ensure_finite()?;
        if let Some(max_norm) = cfg.grad_clip_norm {
            let norm = grads.global_norm();
            if norm > max_norm {
                grads.scale(max_norm / norm);
            }
        }
        optimizer_step(&mut state, &grads, cfg)?;
    }
    Ok(OverfitOutcome { steps_taken: step_cap, memorized: false, state })
}
