//! The five pipeline commands. Each is a plain function over resolved
//! configs so tests drive them without spawning processes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Deserialize;
use sgmt_core::checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CheckpointMeta};
use sgmt_core::data::{
    generate_synthetic, load_dataset, save_dataset, split_records, vocabulary_of, Vocabulary,
    WsiRecord,
};
use sgmt_core::inference::{caption_with_voting, VoteConfig};
use sgmt_core::metrics::{report, EvalCorpus, EvalItem, MetricReport};
use sgmt_core::model::ModelParams;
use sgmt_core::rng::derive_seed;
use sgmt_core::sampler::SamplerConfig;
use sgmt_core::training::{train, TrainConfig, TrainOptions, TrainState};

use crate::config::{fmt4, RunConfig};
use crate::error::{CliError, Result};

/// Which records of a dataset a command works on.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Holdout,
    All,
}

impl std::str::FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "holdout" => Ok(Split::Holdout),
            "all" => Ok(Split::All),
            other => Err(format!("unknown split `{other}` (train|holdout|all)")),
        }
    }
}

pub fn select_split(
    records: &[WsiRecord],
    split: Split,
    holdout_fraction: f64,
) -> Vec<WsiRecord> {
    let (train_idx, holdout_idx) = split_records(records.len(), holdout_fraction);
    let indices = match split {
        Split::Train => train_idx,
        Split::Holdout => holdout_idx,
        Split::All => (0..records.len()).collect(),
    };
    indices.into_iter().map(|i| records[i].clone()).collect()
}

fn num_subtypes_of(records: &[WsiRecord]) -> usize {
    records.iter().map(|r| r.subtype as usize + 1).max().unwrap_or(2).max(2)
}

// ---------------------------------------------------------------------------
// synth-data

#[derive(Debug)]
pub struct SynthOutcome {
    pub records: usize,
    pub vocab_size: usize,
}

pub fn cmd_synth_data(config: &RunConfig, out: &Path, force: bool) -> Result<SynthOutcome> {
    if out.exists() && out.read_dir().map(|mut d| d.next().is_some()).unwrap_or(false) && !force {
        return Err(CliError::Data(format!(
            "output directory `{}` is not empty (use --force to overwrite)",
            out.display()
        )));
    }
    let spec = config.synthetic_spec()?;
    let records = generate_synthetic(&spec).map_err(CliError::from)?;
    let vocab = vocabulary_of(&records).map_err(CliError::from)?;
    save_dataset(&records, &vocab, out).map_err(CliError::from)?;
    println!("wrote {} records, vocabulary size {}", records.len(), vocab.size());
    Ok(SynthOutcome { records: records.len(), vocab_size: vocab.size() })
}

// ---------------------------------------------------------------------------
// train

#[derive(Debug)]
pub struct TrainOutcome {
    pub checkpoint_dir: std::path::PathBuf,
    pub loss_csv: std::path::PathBuf,
    pub final_loss: f64,
    pub steps: u64,
}

pub struct TrainArgs<'a> {
    pub dataset: &'a Path,
    pub out: &'a Path,
    pub profile: String,
    pub m_limit: Option<usize>,
    pub resume: Option<&'a Path>,
    pub holdout_fraction: f64,
}

pub fn cmd_train(config: &RunConfig, args: &TrainArgs) -> Result<TrainOutcome> {
    let (records, vocab) = load_dataset(args.dataset).map_err(CliError::from)?;
    if records.is_empty() {
        return Err(CliError::Data("dataset has no records".into()));
    }
    let train_set = select_split(&records, Split::Train, args.holdout_fraction);
    let holdout = select_split(&records, Split::Holdout, args.holdout_fraction);

    let model_cfg = config.model_config(vocab.size(), num_subtypes_of(&records))?;
    let mut train_cfg = config.train_config(&args.profile)?;
    if let Some(m) = args.m_limit {
        train_cfg.train_limit = m;
    }
    let sampler_cfg = config.sampler_config()?;

    let resume = match args.resume {
        None => None,
        Some(path) => {
            let Checkpoint { params, moments, meta } =
                load_checkpoint(path).map_err(CliError::from)?;
            if params.config() != &model_cfg {
                return Err(CliError::Data(format!(
                    "checkpoint `{}` was trained with a different model configuration",
                    path.display()
                )));
            }
            let mut state = TrainState::new(params);
            if let Some(moments) = moments {
                state.moments = moments;
            }
            state.step = meta.step;
            state.epochs_done = meta.epochs_done;
            Some(state)
        }
    };

    let state = train(
        &train_set,
        &model_cfg,
        &train_cfg,
        &sampler_cfg,
        TrainOptions { resume, holdout: Some(&holdout) },
    )
    .map_err(CliError::from)?;

    fs::create_dir_all(args.out)?;
    let checkpoint_dir = args.out.join("checkpoint");
    let meta =
        CheckpointMeta { step: state.step, epochs_done: state.epochs_done, seed: train_cfg.seed };
    save_checkpoint(&checkpoint_dir, &state.params, Some(&state.moments), &meta)
        .map_err(CliError::from)?;

    let loss_csv = args.out.join("loss.csv");
    let mut csv = String::from("step,loss,caption_loss,subtype_loss\n");
    for row in &state.loss_history {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            row.step, row.loss, row.caption_loss, row.subtype_loss
        ));
    }
    fs::write(&loss_csv, csv)?;

    for eval in &state.eval_history {
        println!("eval step {}: holdout loss {:.4}", eval.step, eval.holdout_loss);
    }
    let final_loss = state.loss_history.last().map(|r| r.loss).unwrap_or(f64::NAN);
    println!(
        "trained {} steps over {} epochs; final loss {:.4}; checkpoint at {}",
        state.step,
        state.epochs_done,
        final_loss,
        checkpoint_dir.display()
    );
    Ok(TrainOutcome { checkpoint_dir, loss_csv, final_loss, steps: state.step })
}

// ---------------------------------------------------------------------------
// caption

pub struct CaptionArgs<'a> {
    pub checkpoint: &'a Path,
    pub dataset: &'a Path,
    pub out: &'a Path,
    pub vote_k: Option<usize>,
    pub infer_limit: Option<usize>,
    pub split: Split,
    pub holdout_fraction: f64,
}

fn load_model(path: &Path) -> Result<ModelParams> {
    let Checkpoint { params, .. } = load_checkpoint(path).map_err(CliError::from)?;
    Ok(params)
}

pub fn cmd_caption(config: &RunConfig, args: &CaptionArgs) -> Result<usize> {
    let params = load_model(args.checkpoint)?;
    let (records, vocab) = load_dataset(args.dataset).map_err(CliError::from)?;
    if vocab.size() != params.config().vocab_size {
        return Err(CliError::Data(format!(
            "dataset vocabulary has {} entries but the checkpoint expects {}",
            vocab.size(),
            params.config().vocab_size
        )));
    }
    let subset = select_split(&records, args.split, args.holdout_fraction);

    let mut sampler_cfg = config.sampler_config()?;
    if let Some(cap) = args.infer_limit {
        sampler_cfg.infer_limit_override = Some(cap);
    }
    let mut vote_cfg = config.vote_config()?;
    if let Some(k) = args.vote_k {
        vote_cfg.k = k;
    }
    vote_cfg.validate().map_err(CliError::from)?;

    let mut file = fs::File::create(args.out)?;
    for record in &subset {
        let per_record = VoteConfig {
            seed: derive_seed(vote_cfg.seed, &record.id),
            ..vote_cfg
        };
        let voted = caption_with_voting(record, &params, &sampler_cfg, &per_record, &vocab)
            .map_err(CliError::from)?;
        let line = serde_json::json!({
            "id": record.id,
            "caption": vocab.decode_caption(&voted.caption),
            "subtype_pred": voted.subtype,
            "votes": voted
                .votes
                .iter()
                .map(|v| vocab.decode_caption(&v.caption))
                .collect::<Vec<_>>(),
        });
        writeln!(file, "{line}")?;
    }
    println!("captioned {} records into {}", subset.len(), args.out.display());
    Ok(subset.len())
}

// ---------------------------------------------------------------------------
// eval

#[derive(Debug, Deserialize)]
struct CandidateLine {
    id: String,
    caption: String,
    subtype_pred: Option<u32>,
    #[allow(dead_code)]
    #[serde(default)]
    votes: serde_json::Value,
}

pub struct EvalArgs<'a> {
    pub candidates: &'a Path,
    pub dataset: &'a Path,
    pub out: Option<&'a Path>,
    pub split: Split,
    pub holdout_fraction: f64,
}

pub struct EvalOutcome {
    pub report: MetricReport,
    pub subtype_accuracy: f64,
    pub json: String,
}

pub fn cmd_eval(args: &EvalArgs) -> Result<EvalOutcome> {
    let (records, vocab) = load_dataset(args.dataset).map_err(CliError::from)?;
    let subset = select_split(&records, args.split, args.holdout_fraction);
    let by_id: std::collections::HashMap<&str, &WsiRecord> =
        subset.iter().map(|r| (r.id.as_str(), r)).collect();

    let raw = fs::read_to_string(args.candidates)?;
    let mut items = Vec::new();
    let mut subtype_total = 0usize;
    let mut subtype_correct = 0usize;
    let mut per_class: std::collections::BTreeMap<u32, (usize, usize)> = Default::default();
    for (lineno, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cand: CandidateLine = serde_json::from_str(line)
            .map_err(|e| CliError::Data(format!("candidates line {}: {e}", lineno + 1)))?;
        let record = by_id.get(cand.id.as_str()).ok_or_else(|| {
            CliError::Data(format!("candidate id `{}` not present in the selected split", cand.id))
        })?;
        items.push(EvalItem {
            id: cand.id.clone(),
            candidate: sgmt_core::data::tokenize(&cand.caption),
            references: vec![vocab.caption_words(&record.caption)],
        });
        if let Some(pred) = cand.subtype_pred {
            subtype_total += 1;
            let slot = per_class.entry(record.subtype).or_insert((0, 0));
            slot.1 += 1;
            if pred == record.subtype {
                subtype_correct += 1;
                slot.0 += 1;
            }
        }
    }
    let corpus = EvalCorpus::new(items).map_err(CliError::from)?;
    let metric_report = report(&corpus);
    let subtype_accuracy = if subtype_total == 0 {
        f64::NAN
    } else {
        subtype_correct as f64 / subtype_total as f64
    };

    let mut per_class_json = String::new();
    for (class, (ok, total)) in &per_class {
        if !per_class_json.is_empty() {
            per_class_json.push_str(", ");
        }
        per_class_json.push_str(&format!("\"{class}\": {}", fmt4(*ok as f64 / *total as f64)));
    }
    let json = format!(
        "{{\n  \"bleu4\": {},\n  \"cider\": {},\n  \"rougeL\": {},\n  \"meteor\": {},\n  \"degenerate_idf\": {},\n  \"subtype_accuracy\": {},\n  \"per_subtype_accuracy\": {{{per_class_json}}},\n  \"count\": {}\n}}\n",
        fmt4(metric_report.bleu4),
        fmt4(metric_report.cider),
        fmt4(metric_report.rouge_l),
        fmt4(metric_report.meteor),
        metric_report.degenerate_idf,
        if subtype_accuracy.is_nan() { "null".to_string() } else { fmt4(subtype_accuracy) },
        corpus.items().len(),
    );
    if let Some(out) = args.out {
        fs::write(out, &json)?;
    }
    println!("{json}");
    Ok(EvalOutcome { report: metric_report, subtype_accuracy, json })
}

// ---------------------------------------------------------------------------
// sweep

pub struct SweepArgs<'a> {
    pub dataset: &'a Path,
    pub out: &'a Path,
    pub train_limits: Vec<usize>,
    pub infer_limits: Vec<usize>,
    pub profile: String,
    pub holdout_fraction: f64,
}

pub fn cmd_sweep(config: &RunConfig, args: &SweepArgs) -> Result<String> {
    if args.train_limits.is_empty() || args.infer_limits.is_empty() {
        return Err(CliError::Config("sweep needs at least one train and one infer limit".into()));
    }
    let (records, vocab) = load_dataset(args.dataset).map_err(CliError::from)?;
    let train_set = select_split(&records, Split::Train, args.holdout_fraction);
    let holdout = select_split(&records, Split::Holdout, args.holdout_fraction);
    if holdout.is_empty() {
        return Err(CliError::Data("sweep needs a non-empty holdout split".into()));
    }
    let model_cfg = config.model_config(vocab.size(), num_subtypes_of(&records))?;
    let base_train = config.train_config(&args.profile)?;
    let sampler_cfg = config.sampler_config()?;
    let vote_cfg = config.vote_config()?;

    let mut csv = String::from("train_limit,infer_limit,bleu4,cider,rougeL,meteor\n");
    for &train_limit in &args.train_limits {
        let cfg = TrainConfig {
            train_limit,
            seed: derive_seed(base_train.seed, &format!("sweep/train{train_limit}")),
            ..base_train.clone()
        };
        let state =
            train(&train_set, &model_cfg, &cfg, &sampler_cfg, TrainOptions::default())
                .map_err(CliError::from)?;
        for &infer_limit in &args.infer_limits {
            let eval_sampler = SamplerConfig {
                infer_limit_override: Some(infer_limit),
                ..sampler_cfg
            };
            let mut items = Vec::new();
            for record in &holdout {
                let per_record = VoteConfig {
                    seed: derive_seed(vote_cfg.seed, &format!("{}/{}", infer_limit, record.id)),
                    ..vote_cfg
                };
                let voted =
                    caption_with_voting(record, &state.params, &eval_sampler, &per_record, &vocab)
                        .map_err(CliError::from)?;
                items.push(EvalItem {
                    id: record.id.clone(),
                    candidate: vocab.caption_words(&voted.caption),
                    references: vec![vocab.caption_words(&record.caption)],
                });
            }
            let corpus = EvalCorpus::new(items).map_err(CliError::from)?;
            let r = report(&corpus);
            csv.push_str(&format!(
                "{train_limit},{infer_limit},{},{},{},{}\n",
                fmt4(r.bleu4),
                fmt4(r.cider),
                fmt4(r.rouge_l),
                fmt4(r.meteor)
            ));
            println!(
                "sweep train_limit={train_limit} infer_limit={infer_limit}: bleu4 {}",
                fmt4(r.bleu4)
            );
        }
    }
    fs::write(args.out, &csv)?;
    Ok(csv)
}

// Re-exported for tests that need the vocabulary next to a dataset.
pub fn dataset_vocab(dataset: &Path) -> Result<Vocabulary> {
    let (_, vocab) = load_dataset(dataset).map_err(CliError::from)?;
    Ok(vocab)
}
