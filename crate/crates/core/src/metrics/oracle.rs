//! Naive reference implementations of the caption metrics.
//!
//! Everything here is written for obviousness, not speed: linear scans over
//! n-gram lists, recursive LCS, exhaustive alignment enumeration. Only use
//! these on short sentences. They deliberately share no helper code with the
//! fast implementations so the two can cross-check each other.

use super::EvalCorpus;

fn windows_of(tokens: &[String], n: usize) -> Vec<&[String]> {
    if tokens.len() < n {
        Vec::new()
    } else {
        tokens.windows(n).collect()
    }
}

fn occurrences(haystack: &[&[String]], needle: &[String]) -> usize {
    haystack.iter().filter(|w| **w == needle).count()
}

/// Corpus BLEU-4 by direct n-gram list scans.
pub fn bleu4_naive(corpus: &EvalCorpus) -> f64 {
    let mut num = [0usize; 4];
    let mut den = [0usize; 4];
    let mut cand_total = 0usize;
    let mut ref_total = 0usize;
    for item in corpus.items() {
        cand_total += item.candidate.len();
        let mut best_len = item.references[0].len();
        for r in &item.references {
            let better = (r.len() as i64 - item.candidate.len() as i64).abs()
                < (best_len as i64 - item.candidate.len() as i64).abs()
                || ((r.len() as i64 - item.candidate.len() as i64).abs()
                    == (best_len as i64 - item.candidate.len() as i64).abs()
                    && r.len() < best_len);
            if better {
                best_len = r.len();
            }
        }
        ref_total += best_len;
        for n in 1..=4 {
            let cand_grams = windows_of(&item.candidate, n);
            den[n - 1] += cand_grams.len();
            let mut seen: Vec<&[String]> = Vec::new();
            for &g in &cand_grams {
                if seen.contains(&g) {
                    continue;
                }
                seen.push(g);
                let in_cand = occurrences(&cand_grams, g);
                let max_in_refs = item
                    .references
                    .iter()
                    .map(|r| occurrences(&windows_of(r, n), g))
                    .max()
                    .unwrap_or(0);
                num[n - 1] += in_cand.min(max_in_refs);
            }
        }
    }
    if cand_total == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 0..4 {
        if num[n] == 0 || den[n] == 0 {
            return 0.0;
        }
        log_sum += 0.25 * (num[n] as f64 / den[n] as f64).ln();
    }
    let bp =
        if cand_total > ref_total { 1.0 } else { (1.0 - ref_total as f64 / cand_total as f64).exp() };
    bp * log_sum.exp()
}

fn lcs_recursive(a: &[String], b: &[String]) -> usize {
    if a.is_empty() || b.is_empty() {
        0
    } else if a[a.len() - 1] == b[b.len() - 1] {
        1 + lcs_recursive(&a[..a.len() - 1], &b[..b.len() - 1])
    } else {
        lcs_recursive(&a[..a.len() - 1], b).max(lcs_recursive(a, &b[..b.len() - 1]))
    }
}

/// Mean per-item ROUGE-L F1 with a plain recursive LCS.
pub fn rouge_l_naive(corpus: &EvalCorpus) -> f64 {
    let mut total = 0.0;
    for item in corpus.items() {
        let mut best: f64 = 0.0;
        for r in &item.references {
            let lcs = lcs_recursive(&item.candidate, r);
            if lcs == 0 || item.candidate.is_empty() {
                continue;
            }
            let p = lcs as f64 / item.candidate.len() as f64;
            let rec = lcs as f64 / r.len() as f64;
            best = best.max(2.0 * p * rec / (p + rec));
        }
        total += best;
    }
    total / corpus.items().len() as f64
}

/// Enumerate every injective exact-match alignment, keeping the one with the
/// most matches and, among those, the fewest chunks.
fn best_alignment(cand: &[String], reference: &[String]) -> (usize, usize) {
    fn recurse(
        pos: usize,
        cand: &[String],
        reference: &[String],
        used: &mut Vec<bool>,
        map: &mut Vec<Option<usize>>,
        matched: usize,
        best: &mut (usize, usize),
    ) {
        // Even matching every remaining token cannot beat the best.
        if matched + (cand.len() - pos) < best.0 {
            return;
        }
        if pos == cand.len() {
            let mut chunks = 0usize;
            let mut prev: Option<(usize, usize)> = None;
            for (i, m) in map.iter().enumerate() {
                if let Some(j) = m {
                    if !matches!(prev, Some((pi, pj)) if pi + 1 == i && pj + 1 == *j) {
                        chunks += 1;
                    }
                    prev = Some((i, *j));
                } else {
                    prev = None;
                }
            }
            if matched > best.0 || (matched == best.0 && chunks < best.1) {
                *best = (matched, chunks);
            }
            return;
        }
        for j in 0..reference.len() {
            if !used[j] && reference[j] == cand[pos] {
                used[j] = true;
                map[pos] = Some(j);
                recurse(pos + 1, cand, reference, used, map, matched + 1, best);
                map[pos] = None;
                used[j] = false;
            }
        }
        recurse(pos + 1, cand, reference, used, map, matched, best);
    }

    let mut best = (0usize, usize::MAX);
    let mut used = vec![false; reference.len()];
    let mut map = vec![None; cand.len()];
    recurse(0, cand, reference, &mut used, &mut map, 0, &mut best);
    if best.0 == 0 {
        (0, 0)
    } else {
        best
    }
}

/// Mean per-item METEOR-lite via exhaustive alignment search.
pub fn meteor_naive(corpus: &EvalCorpus) -> f64 {
    let mut total = 0.0;
    for item in corpus.items() {
        let mut best_score: f64 = 0.0;
        for r in &item.references {
            if item.candidate.is_empty() || r.is_empty() {
                continue;
            }
            let (matches, chunks) = best_alignment(&item.candidate, r);
            if matches == 0 {
                continue;
            }
            let m = matches as f64;
            let p = m / item.candidate.len() as f64;
            let rec = m / r.len() as f64;
            let f_mean = 10.0 * p * rec / (rec + 9.0 * p);
            let penalty = 0.5 * (chunks as f64 / m).powi(3);
            best_score = best_score.max(f_mean * (1.0 - penalty));
        }
        total += best_score;
    }
    total / corpus.items().len() as f64
}

/// Corpus CIDEr-D with list-based TF-IDF bookkeeping.
pub fn cider_naive(corpus: &EvalCorpus) -> f64 {
    let n_items = corpus.items().len() as f64;
    let doc_freq = |n: usize, gram: &[String]| -> f64 {
        corpus
            .items()
            .iter()
            .filter(|item| {
                item.references.iter().any(|r| occurrences(&windows_of(r, n), gram) > 0)
            })
            .count() as f64
    };
    let mut corpus_total = 0.0;
    for item in corpus.items() {
        let mut item_score = 0.0;
        for r in &item.references {
            let mut over_n = 0.0;
            for n in 1..=4 {
                let cand_grams = windows_of(&item.candidate, n);
                let ref_grams = windows_of(r, n);
                // Union of distinct n-grams.
                let mut union: Vec<&[String]> = Vec::new();
                for &g in cand_grams.iter().chain(ref_grams.iter()) {
                    if !union.contains(&g) {
                        union.push(g);
                    }
                }
                let mut dot = 0.0;
                let mut cn = 0.0;
                let mut rn = 0.0;
                for g in union {
                    let idf = n_items.ln() - doc_freq(n, g).max(1.0).ln();
                    let hv = occurrences(&cand_grams, g) as f64 * idf;
                    let rv = occurrences(&ref_grams, g) as f64 * idf;
                    dot += hv.min(rv) * rv;
                    cn += hv * hv;
                    rn += rv * rv;
                }
                if cn > 0.0 && rn > 0.0 {
                    let delta = item.candidate.len() as f64 - r.len() as f64;
                    over_n += dot / (cn.sqrt() * rn.sqrt()) * (-delta * delta / 72.0).exp();
                }
            }
            item_score += over_n / 4.0;
        }
        corpus_total += 10.0 * item_score / item.references.len() as f64;
    }
    corpus_total / n_items
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::EvalItem;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn exhaustive_alignment_agrees_on_hand_cases() {
        assert_eq!(best_alignment(&words("a b c"), &words("a b c")), (3, 1));
        assert_eq!(best_alignment(&words("a b"), &words("b a")), (2, 2));
        assert_eq!(best_alignment(&words("the cat the dog"), &words("the dog the cat")), (4, 2));
    }

    #[test]
    fn oracle_identity_values() {
        let corpus = EvalCorpus::new(vec![
            EvalItem { id: "0".into(), candidate: words("a b c d e"), references: vec![words("a b c d e")] },
            EvalItem { id: "1".into(), candidate: words("f g h i j"), references: vec![words("f g h i j")] },
        ])
        .unwrap();
        assert!((bleu4_naive(&corpus) - 1.0).abs() < 1e-12);
        assert!((rouge_l_naive(&corpus) - 1.0).abs() < 1e-12);
        assert!((cider_naive(&corpus) - 10.0).abs() < 1e-9);
    }
}
