// probe: subtype-guidance ablation with a single-modifier grammar
use sgmt_core::data::{generate_synthetic, split_records, vocabulary_of, SyntheticSpec, WsiRecord, Vocabulary};
use sgmt_core::inference::{caption_with_voting, VoteConfig};
use sgmt_core::metrics::{bleu4, EvalCorpus, EvalItem};
use sgmt_core::model::ModelConfig;
use sgmt_core::rng::derive_seed;
use sgmt_core::sampler::SamplerConfig;
use sgmt_core::training::{train, TrainConfig, TrainOptions, TrainState};

fn eval(hold: &[WsiRecord], vocab: &Vocabulary, state: &TrainState, seed: u64) -> (f64, f64) {
    let sampler = SamplerConfig { train_limit: 16, ..Default::default() };
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
    for rep in 0..3u64 {
        let mut spec = SyntheticSpec::with_defaults(4, 160, derive_seed(rep, "c6/data")).unwrap();
        spec.patches_per_slide = (12, 24);
        for s in spec.subtypes.iter_mut() {
            s.template = s.template.replace(" and {grain} stroma", "");
        }
        let records = generate_synthetic(&spec).unwrap();
        let vocab = vocabulary_of(&records).unwrap();
        let (ti, hi) = split_records(records.len(), 0.25);
        let tr: Vec<_> = ti.iter().map(|&i| records[i].clone()).collect();
        let hold: Vec<_> = hi.iter().map(|&i| records[i].clone()).collect();
        let model_cfg = ModelConfig { embed_dim: 64, heads: 4, enc_layers: 2, dec_layers: 1, ff_dim: 128,
            vocab_size: vocab.size(), num_subtypes: 4, max_caption_len: 50,
            dropout_rate: 0.1, patch_channels: 3, embed_channels: [8, 16, 32] };
        for (epochs, clip) in [(40usize, Some(1.0f64)), (90, None), (90, Some(1.0))] {
            let t0 = std::time::Instant::now();
            let mut results = Vec::new();
            for beta in [1.0f64, 0.0] {
                let cfg = TrainConfig { learning_rate: 1e-3, weight_decay: 1e-2, beta, epochs,
                    batch_size: 8, train_limit: 16, seed: derive_seed(rep, "c6/train"),
                    grad_clip_norm: clip, eval_every: 0 };
                let state = train(&tr, &model_cfg, &cfg, &SamplerConfig::default(), TrainOptions::default()).unwrap();
                results.push(eval(&hold, &vocab, &state, rep));
            }
            println!("rep{rep} ep={epochs} clip={clip:?}: beta1 BLEU={:.4} acc={:.3} | beta0 BLEU={:.4} acc={:.3} | {:?}",
                results[0].0, results[0].1, results[1].0, results[1].1, t0.elapsed());
        }
    }
}
