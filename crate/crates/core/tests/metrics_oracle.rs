//! Cross-checks the fast metric implementations against the naive reference
//! implementations on random corpora, plus the frozen hand-derived values
//! and the structural invariants.

use rand::Rng;
use sgmt_core::metrics::{
    bleu4, cider, meteor_lite, oracle, report, rouge_l, EvalCorpus, EvalItem,
};
use sgmt_core::rng::derive_rng;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_string).collect()
}

fn corpus(pairs: &[(&str, &[&str])]) -> EvalCorpus {
    let items = pairs
        .iter()
        .enumerate()
        .map(|(i, (cand, refs))| EvalItem {
            id: format!("item-{i}"),
            candidate: words(cand),
            references: refs.iter().map(|r| words(r)).collect(),
        })
        .collect();
    EvalCorpus::new(items).unwrap()
}

/// Random corpora with short sentences over a tiny vocabulary — the regime
/// where the exhaustive oracles are tractable.
pub fn random_corpus(seed: u64, max_len: usize, vocab: usize) -> EvalCorpus {
    let mut rng = derive_rng(seed, "metrics-corpus");
    let n_items = rng.gen_range(2..6);
    let sentence = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<String> {
        let len = rng.gen_range(0..=max_len);
        (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
    };
    let items = (0..n_items)
        .map(|i| {
            let n_refs = rng.gen_range(1..3);
            EvalItem {
                id: format!("item-{i}"),
                candidate: sentence(&mut rng),
                references: (0..n_refs)
                    .map(|_| {
                        // References are never empty.
                        let mut r = sentence(&mut rng);
                        if r.is_empty() {
                            r.push("w0".into());
                        }
                        r
                    })
                    .collect(),
            }
        })
        .collect();
    EvalCorpus::new(items).unwrap()
}

fn assert_close(a: f64, b: f64, what: &str, seed: u64) {
    assert!((a - b).abs() <= 1e-9, "{what} mismatch at seed {seed}: {a} vs {b}");
}

#[test]
fn implementations_agree_with_oracles_on_random_corpora() {
    for seed in 0..120 {
        let corpus = random_corpus(seed, 8, 10);
        assert_close(bleu4(&corpus), oracle::bleu4_naive(&corpus), "bleu4", seed);
        assert_close(rouge_l(&corpus), oracle::rouge_l_naive(&corpus), "rouge_l", seed);
        assert_close(meteor_lite(&corpus), oracle::meteor_naive(&corpus), "meteor", seed);
        assert_close(cider(&corpus), oracle::cider_naive(&corpus), "cider", seed);
    }
}

#[test]
fn scores_are_invariant_to_item_order() {
    for seed in 200..220 {
        let c = random_corpus(seed, 6, 8);
        let mut items = c.items().to_vec();
        items.reverse();
        let reversed = EvalCorpus::new(items).unwrap();
        assert_close(bleu4(&c), bleu4(&reversed), "bleu4-permutation", seed);
        assert_close(rouge_l(&c), rouge_l(&reversed), "rouge-permutation", seed);
        assert_close(meteor_lite(&c), meteor_lite(&reversed), "meteor-permutation", seed);
        assert_close(cider(&c), cider(&reversed), "cider-permutation", seed);
    }
}

#[test]
fn scores_stay_in_range() {
    for seed in 300..360 {
        let c = random_corpus(seed, 8, 6);
        let r = report(&c);
        assert!((0.0..=1.0).contains(&r.bleu4), "bleu4 {} out of range", r.bleu4);
        assert!((0.0..=1.0).contains(&r.rouge_l));
        assert!((0.0..=1.0).contains(&r.meteor));
        assert!((0.0..=10.0 + 1e-12).contains(&r.cider), "cider {} out of range", r.cider);
    }
}

#[test]
fn identity_candidate_maximizes_bleu_and_rouge_among_same_length() {
    // Enumerate all candidates of length 3 over a 3-word vocabulary against a
    // fixed reference; the reference itself must score highest.
    let reference = ["w0", "w1", "w2"];
    let vocab = ["w0", "w1", "w2"];
    let ref_words: Vec<String> = reference.iter().map(|s| s.to_string()).collect();
    let mk = |cand: Vec<String>| {
        EvalCorpus::new(vec![EvalItem {
            id: "x".into(),
            candidate: cand,
            references: vec![ref_words.clone()],
        }])
        .unwrap()
    };
    let identity_bleu = bleu4(&mk(ref_words.clone()));
    let identity_rouge = rouge_l(&mk(ref_words.clone()));
    for a in vocab {
        for b in vocab {
            for c in vocab {
                let cand: Vec<String> = [a, b, c].iter().map(|s| s.to_string()).collect();
                assert!(bleu4(&mk(cand.clone())) <= identity_bleu + 1e-12);
                assert!(rouge_l(&mk(cand)) <= identity_rouge + 1e-12);
            }
        }
    }
    assert!((identity_rouge - 1.0).abs() < 1e-12);
}

#[test]
fn cider_identity_in_multi_item_corpus_matches_oracle_and_bound() {
    let c = corpus(&[
        ("a b c d", &["a b c d"]),
        ("e f g h", &["e f g h"]),
        ("a b x y", &["a b q r"]),
    ]);
    let fast = cider(&c);
    assert_close(fast, oracle::cider_naive(&c), "cider-identity", 0);
    assert!(fast <= 10.0 + 1e-12);
}

#[test]
fn empty_candidates_never_panic() {
    let c = corpus(&[("", &["a b"]), ("a", &["a"])]);
    let r = report(&c);
    assert!(r.bleu4 >= 0.0 && r.rouge_l >= 0.0 && r.meteor >= 0.0 && r.cider >= 0.0);
}
