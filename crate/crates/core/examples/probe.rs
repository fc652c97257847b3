// probe: ablation directions (subtype guidance, voting, patch-limit trends)
use sgmt_core::data::{generate_synthetic, perturb_patches, split_records, vocabulary_of, SyntheticSpec, WsiRecord};
use sgmt_core::inference::{caption_once, caption_with_voting, VoteConfig};
use sgmt_core::metrics::{bleu4, EvalCorpus, EvalItem};
use sgmt_core::model::ModelConfig;
use sgmt_core::rng::{derive_rng, derive_seed};
use sgmt_core::sampler::SamplerConfig;
use sgmt_core::training::{train, TrainConfig, TrainOptions};
use sgmt_core::data::Vocabulary;
use sgmt_core::training::TrainState;

fn quick_data(seed: u64) -> (Vec<WsiRecord>, Vec<WsiRecord>, Vocabulary) {
    let mut spec = SyntheticSpec::with_defaults(4, 160, derive_seed(seed, "data")).unwrap();
    spec.patches_per_slide = (12, 24);
    let records = generate_synthetic(&spec).unwrap();
    let vocab = vocabulary_of(&records).unwrap();
    let (ti, hi) = split_records(records.len(), 0.25);
    (ti.iter().map(|&i| records[i].clone()).collect(), hi.iter().map(|&i| records[i].clone()).collect(), vocab)
}

fn quick_model(vocab: &Vocabulary) -> ModelConfig {
    ModelConfig { embed_dim: 64, heads: 4, enc_layers: 2, dec_layers: 1, ff_dim: 128,
        vocab_size: vocab.size(), num_subtypes: 4, max_caption_len: 50,
        dropout_rate: 0.1, patch_channels: 3, embed_channels: [8, 16, 32] }
}

fn quick_train(tr: &[WsiRecord], vocab: &Vocabulary, seed: u64, beta: f64, m: usize, epochs: usize) -> TrainState {
    let model_cfg = quick_model(vocab);
    let cfg = TrainConfig { learning_rate: 1e-3, weight_decay: 1e-2, beta, epochs, batch_size: 8,
        train_limit: m, seed, grad_clip_norm: None, eval_every: 0 };
    train(tr, &model_cfg, &cfg, &SamplerConfig::default(), TrainOptions::default()).unwrap()
}

fn eval_bleu_sub(hold: &[WsiRecord], vocab: &Vocabulary, state: &TrainState, infer_limit: usize, seed: u64) -> (f64, f64) {
    let sampler = SamplerConfig { train_limit: 1, infer_limit_override: Some(infer_limit), ..Default::default() };
    let mut items = Vec::new(); let mut sub_ok = 0;
    for r in hold {
        let vc = VoteConfig { k: 5, seed: derive_seed(seed, &format!("v/{}", r.id)), ..Default::default() };
        let res = caption_with_voting(r, &state.params, &sampler, &vc, vocab).unwrap();
        if res.subtype == r.subtype { sub_ok += 1; }
        items.push(EvalItem { id: r.id.clone(), candidate: vocab.caption_words(&res.caption),
            references: vec![vocab.caption_words(&r.caption)] });
    }
    (bleu4(&EvalCorpus::new(items).unwrap()), sub_ok as f64 / hold.len() as f64)
}

fn main() {
    let which = std::env::args().nth(1).unwrap_or_default();
    if which == "6" {
        for rep in 0..3u64 {
            let (tr, hold, vocab) = quick_data(100 + rep);
            let t0 = std::time::Instant::now();
            let s1 = quick_train(&tr, &vocab, derive_seed(rep, "b1"), 1.0, 16, 50);
            let s0 = quick_train(&tr, &vocab, derive_seed(rep, "b1"), 0.0, 16, 50);
            let (b1, a1) = eval_bleu_sub(&hold, &vocab, &s1, 32, rep);
            let (b0, a0) = eval_bleu_sub(&hold, &vocab, &s0, 32, rep);
            println!("rep{rep}: beta1 BLEU={b1:.4} acc={a1:.3} | beta0 BLEU={b0:.4} acc={a0:.3} | {:?}", t0.elapsed());
        }
    } else if which == "7" {
        for rep in 0..3u64 {
            let (tr, hold, vocab) = quick_data(200 + rep);
            let s = quick_train(&tr, &vocab, derive_seed(rep, "b7"), 1.0, 16, 30);
            let all: Vec<_> = tr.iter().chain(hold.iter()).cloned().collect();
            let hold = all;
            let sampler = SamplerConfig { train_limit: 16, ..Default::default() };
            let mut one_ok = 0; let mut five_ok = 0;
            for r in &hold {
                let noisy = perturb_patches(r, 0.25, &mut derive_rng(rep, &format!("noise/{}", r.id)));
                let vc5 = VoteConfig { k: 5, seed: derive_seed(rep, &format!("v5/{}", r.id)), ..Default::default() };
                let v5 = caption_with_voting(&noisy, &s.params, &sampler, &vc5, &vocab).unwrap();
                let mut rng1 = derive_rng(derive_seed(rep, &format!("v1/{}", r.id)), "vote/0");
                let v1 = caption_once(&noisy, &s.params, &sampler, &mut rng1).unwrap();
                if v1.caption.tokens() == r.caption.tokens() { one_ok += 1; }
                if v5.caption.tokens() == r.caption.tokens() { five_ok += 1; }
            }
            println!("rep{rep}: k=1 exact {one_ok}/{} | k=5 exact {five_ok}/{}", hold.len(), hold.len());
        }
    } else if which == "8" {
        let (tr, hold, vocab) = quick_data(300);
        for m in [1usize, 16] {
            let t0 = std::time::Instant::now();
            let s = quick_train(&tr, &vocab, derive_seed(m as u64, "b8"), 1.0, m, 30);
            let mut line = format!("M={m}:");
            for infer in [1usize, 2, 4, 8, 16, 32] {
                let (b, _) = eval_bleu_sub(&hold, &vocab, &s, infer, 999);
                line += &format!(" i{infer}={b:.4}");
            }
            println!("{line} | {:?}", t0.elapsed());
        }
    }
}
