//! Corpus-level caption metrics: BLEU-4, ROUGE-L, METEOR-lite, CIDEr-D.
//!
//! All metrics work on word tokens (strings), candidates joined to references
//! by item. Conventions:
//! - BLEU-4 pools clipped n-gram counts over the corpus (geometric mean of
//!   p1..p4, brevity penalty from closest-reference lengths). Smoothing is
//!   off by default; [`bleu4_smoothed`] applies add-one to the precisions.
//! - ROUGE-L is plain per-item LCS F1 against the best reference, averaged.
//! - METEOR-lite is exact-match alignment only (no stemming or synonymy, so
//!   absolute values are not comparable to full METEOR), F_mean = 10PR/(R+9P)
//!   with chunk penalty 0.5·(chunks/matches)³.
//! - CIDEr-D over n = 1..4 with reference-corpus IDF, count clipping, and a
//!   Gaussian length penalty (σ = 6), scaled by 10.
//!
//! [`oracle`] holds deliberately naive reference implementations used to
//! cross-check these; keep the two sides independent.

mod align;
pub mod oracle;

use std::collections::HashMap;

use crate::error::{Error, Result};

pub(crate) use align::align;

/// One evaluation item: a candidate against one or more references.
#[derive(Debug, Clone)]
pub struct EvalItem {
    pub id: String,
    pub candidate: Vec<String>,
    pub references: Vec<Vec<String>>,
}

/// A validated (candidate, references) corpus.
#[derive(Debug, Clone)]
pub struct EvalCorpus {
    items: Vec<EvalItem>,
}

impl EvalCorpus {
    pub fn new(items: Vec<EvalItem>) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::InvalidSpec("evaluation corpus is empty".into()));
        }
        for item in &items {
            if item.references.is_empty() {
                return Err(Error::InvalidSpec(format!("item `{}` has no references", item.id)));
            }
        }
        Ok(EvalCorpus { items })
    }

    pub fn items(&self) -> &[EvalItem] {
        &self.items
    }
}

/// The four corpus scores. `degenerate_idf` flags a single-item corpus, whose
/// CIDEr IDF table is meaningless.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub bleu4: f64,
    pub cider: f64,
    pub rouge_l: f64,
    pub meteor: f64,
    pub degenerate_idf: bool,
}

pub fn report(corpus: &EvalCorpus) -> MetricReport {
    MetricReport {
        bleu4: bleu4(corpus),
        cider: cider(corpus),
        rouge_l: rouge_l(corpus),
        meteor: meteor_lite(corpus),
        degenerate_idf: corpus.items.len() < 2,
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for window in tokens.windows(n) {
            *counts.entry(window).or_insert(0) += 1;
        }
    }
    counts
}

fn bleu4_impl(corpus: &EvalCorpus, smoothed: bool) -> f64 {
    let mut numerator = [0usize; 4];
    let mut denominator = [0usize; 4];
    let mut cand_len_total = 0usize;
    let mut ref_len_total = 0usize;

    for item in &corpus.items {
        let cand = &item.candidate;
        cand_len_total += cand.len();
        // Closest reference length; ties favor the shorter reference.
        let closest = item
            .references
            .iter()
            .map(|r| r.len())
            .min_by_key(|&rl| {
                let diff = (rl as i64 - cand.len() as i64).abs();
                (diff, rl)
            })
            .unwrap();
        ref_len_total += closest;

        for n in 1..=4 {
            let cand_counts = ngram_counts(cand, n);
            denominator[n - 1] += cand.len().saturating_sub(n - 1);
            if cand_counts.is_empty() {
                continue;
            }
            let ref_counts: Vec<_> = item.references.iter().map(|r| ngram_counts(r, n)).collect();
            for (gram, &count) in &cand_counts {
                let max_ref = ref_counts.iter().map(|rc| rc.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
                numerator[n - 1] += count.min(max_ref);
            }
        }
    }

    if cand_len_total == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        let (num, den) = if smoothed {
            (numerator[n] as f64 + 1.0, denominator[n] as f64 + 1.0)
        } else {
            (numerator[n] as f64, denominator[n] as f64)
        };
        if num <= 0.0 || den <= 0.0 {
            return 0.0;
        }
        log_sum += 0.25 * (num / den).ln();
    }
    let bp = (1.0 - ref_len_total as f64 / cand_len_total as f64).min(0.0).exp();
    bp * log_sum.exp()
}

/// Corpus BLEU-4, no smoothing: zero if any pooled n-gram precision is zero.
pub fn bleu4(corpus: &EvalCorpus) -> f64 {
    bleu4_impl(corpus, false)
}

/// Corpus BLEU-4 with add-one smoothing on the pooled precisions, for tiny
/// corpora where 4-gram counts vanish.
pub fn bleu4_smoothed(corpus: &EvalCorpus) -> f64 {
    bleu4_impl(corpus, true)
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Mean per-item ROUGE-L F1, best reference per item.
pub fn rouge_l(corpus: &EvalCorpus) -> f64 {
    let total: f64 = corpus
        .items
        .iter()
        .map(|item| {
            item.references
                .iter()
                .map(|r| {
                    let lcs = lcs_len(&item.candidate, r);
                    if lcs == 0 {
                        return 0.0;
                    }
                    let p = lcs as f64 / item.candidate.len() as f64;
                    let rec = lcs as f64 / r.len() as f64;
                    2.0 * p * rec / (p + rec)
                })
                .fold(0.0, f64::max)
        })
        .sum();
    total / corpus.items.len() as f64
}

/// Mean per-item METEOR-lite, best reference per item.
pub fn meteor_lite(corpus: &EvalCorpus) -> f64 {
    let total: f64 = corpus
        .items
        .iter()
        .map(|item| {
            item.references
                .iter()
                .map(|r| meteor_sentence(&item.candidate, r))
                .fold(0.0, f64::max)
        })
        .sum();
    total / corpus.items.len() as f64
}

fn meteor_sentence(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (matches, chunks) = align(cand, reference);
    if matches == 0 {
        return 0.0;
    }
    let m = matches as f64;
    let p = m / cand.len() as f64;
    let r = m / reference.len() as f64;
    let f_mean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m).powi(3);
    f_mean * (1.0 - penalty)
}

const CIDER_SIGMA: f64 = 6.0;

/// Corpus CIDEr-D on the 0–10 scale.
pub fn cider(corpus: &EvalCorpus) -> f64 {
    // Document frequency per n-gram: number of items whose reference set
    // contains it at least once.
    let mut df: [HashMap<Vec<String>, usize>; 4] = Default::default();
    for item in &corpus.items {
        for n in 1..=4 {
            let mut seen: Vec<&[String]> = Vec::new();
            for r in &item.references {
                if r.len() >= n {
                    for w in r.windows(n) {
                        if !seen.contains(&w) {
                            seen.push(w);
                        }
                    }
                }
            }
            for w in seen {
                *df[n - 1].entry(w.to_vec()).or_insert(0) += 1;
            }
        }
    }
    let log_items = (corpus.items.len() as f64).ln();
    let idf = |n: usize, gram: &[String]| -> f64 {
        let d = df[n - 1].get(gram).copied().unwrap_or(0) as f64;
        log_items - d.max(1.0).ln()
    };

    let mut corpus_total = 0.0;
    for item in &corpus.items {
        let mut per_n_sum = [0.0f64; 4];
        for r in &item.references {
            for n in 1..=4 {
                per_n_sum[n - 1] += clipped_cosine(&item.candidate, r, n, &idf);
            }
        }
        let num_refs = item.references.len() as f64;
        let item_score: f64 =
            per_n_sum.iter().map(|s| 10.0 * s / num_refs).sum::<f64>() / 4.0;
        corpus_total += item_score;
    }
    corpus_total / corpus.items.len() as f64
}

fn clipped_cosine(
    cand: &[String],
    reference: &[String],
    n: usize,
    idf: &impl Fn(usize, &[String]) -> f64,
) -> f64 {
    let cand_counts = ngram_counts(cand, n);
    let ref_counts = ngram_counts(reference, n);
    let mut num = 0.0;
    let mut cand_norm_sq = 0.0;
    let mut ref_norm_sq = 0.0;
    for (gram, &c) in &cand_counts {
        let w = idf(n, gram);
        let hv = c as f64 * w;
        cand_norm_sq += hv * hv;
        if let Some(&rc) = ref_counts.get(gram) {
            let rv = rc as f64 * w;
            num += hv.min(rv) * rv;
        }
    }
    for (gram, &c) in &ref_counts {
        let w = idf(n, gram);
        let rv = c as f64 * w;
        ref_norm_sq += rv * rv;
    }
    if cand_norm_sq == 0.0 || ref_norm_sq == 0.0 {
        return 0.0;
    }
    let delta = cand.len() as f64 - reference.len() as f64;
    let length_penalty = (-delta * delta / (2.0 * CIDER_SIGMA * CIDER_SIGMA)).exp();
    num / (cand_norm_sq.sqrt() * ref_norm_sq.sqrt()) * length_penalty
}

#[cfg(test)]
mod tests {
    use super::*;

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

    #[test]
    fn bleu_identity_is_one() {
        let c = corpus(&[("a b c d e", &["a b c d e"])]);
        assert!((bleu4(&c) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_brevity_penalty_hand_value() {
        // All precisions 1, candidate shorter than the reference by one.
        let c = corpus(&[("a b c d", &["a b c d e"])]);
        let expected = (1.0f64 - 5.0 / 4.0).exp();
        assert!((bleu4(&c) - expected).abs() < 1e-12);
    }

    #[test]
    fn bleu_no_common_fourgram_is_zero_without_smoothing() {
        let c = corpus(&[("a b c x e", &["a b c d e"])]);
        assert_eq!(bleu4(&c), 0.0);
        assert!(bleu4_smoothed(&c) > 0.0);
    }

    #[test]
    fn bleu_empty_candidate_contributes_zero_counts() {
        let c = corpus(&[("", &["a b c d"]), ("a b c d", &["a b c d"])]);
        assert!(bleu4(&c) > 0.0);
    }

    #[test]
    fn rouge_identity_and_disjoint() {
        assert!((rouge_l(&corpus(&[("a b c", &["a b c"])])) - 1.0).abs() < 1e-12);
        assert_eq!(rouge_l(&corpus(&[("a b", &["x y"])])), 0.0);
    }

    #[test]
    fn rouge_hand_value() {
        // LCS("a b c", "a c b") = 2, P = R = 2/3, F1 = 2/3.
        let c = corpus(&[("a b c", &["a c b"])]);
        assert!((rouge_l(&c) - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn meteor_identity_penalty() {
        let c = corpus(&[("a b c d", &["a b c d"])]);
        let expected = 1.0 - 0.5 / 64.0;
        assert!((meteor_lite(&c) - expected).abs() < 1e-12);
    }

    #[test]
    fn meteor_swapped_words() {
        // matches = 2, chunks = 2, F_mean = 1, score = 0.5.
        let c = corpus(&[("a b", &["b a"])]);
        assert!((meteor_lite(&c) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn meteor_disjoint_is_zero() {
        assert_eq!(meteor_lite(&corpus(&[("a b", &["x y"])])), 0.0);
    }

    #[test]
    fn cider_no_overlap_is_zero() {
        let c = corpus(&[("x y", &["a b"]), ("p q", &["c d"])]);
        assert_eq!(cider(&c), 0.0);
    }

    #[test]
    fn cider_identity_scores_ten_with_informative_idf() {
        // Two items with disjoint references: every n-gram has df = 1 < N,
        // so all vectors are nonzero and each per-n cosine is exactly 1.
        let c = corpus(&[
            ("a b c d e", &["a b c d e"]),
            ("f g h i j", &["f g h i j"]),
        ]);
        assert!((cider(&c) - 10.0).abs() < 1e-9);
    }

    #[test]
    fn single_item_corpus_sets_degenerate_flag() {
        let c = corpus(&[("a b", &["a b"])]);
        let r = report(&c);
        assert!(r.degenerate_idf);
        assert!(r.cider.is_finite());
    }

    #[test]
    fn report_ranges() {
        let c = corpus(&[("a b c d", &["a b x d"]), ("k l m", &["k l m n"])]);
        let r = report(&c);
        assert!((0.0..=1.0).contains(&r.bleu4));
        assert!((0.0..=1.0).contains(&r.rouge_l));
        assert!((0.0..=1.0).contains(&r.meteor));
        assert!((0.0..=10.0).contains(&r.cider));
    }
}
