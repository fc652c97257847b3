//! Exact-match unigram alignment for METEOR.
//!
//! The alignment must maximize the number of matched unigrams and, among
//! maximal matchings, minimize the number of chunks (runs of matches that are
//! contiguous in both sentences). The match count is forced — it is
//! Σ_w min(count_cand(w), count_ref(w)) — but chunk minimization requires a
//! search over which duplicate occurrences pair up. We enumerate exactly when
//! the assignment space is small (it always is for near-unique wording) and
//! fall back to a per-word diagonal assignment for pathological repetition.

use std::collections::HashMap;

const SEARCH_BUDGET: u64 = 2_000_000;
const UNMATCHED: usize = usize::MAX;

struct WordSlots {
    cand_positions: Vec<usize>,
    ref_positions: Vec<usize>,
    quota: usize,
}

/// Returns `(matches, chunks)` for the optimal alignment.
pub(crate) fn align(cand: &[String], reference: &[String]) -> (usize, usize) {
    let mut by_word: HashMap<&String, (Vec<usize>, Vec<usize>)> = HashMap::new();
    for (i, w) in cand.iter().enumerate() {
        by_word.entry(w).or_default().0.push(i);
    }
    for (j, w) in reference.iter().enumerate() {
        by_word.entry(w).or_default().1.push(j);
    }
    let mut slots: Vec<WordSlots> = by_word
        .into_values()
        .filter_map(|(c, r)| {
            let quota = c.len().min(r.len());
            (quota > 0).then_some(WordSlots { cand_positions: c, ref_positions: r, quota })
        })
        .collect();
    // Deterministic search order.
    slots.sort_by_key(|s| s.cand_positions[0]);

    let matches: usize = slots.iter().map(|s| s.quota).sum();
    if matches == 0 {
        return (0, 0);
    }

    let mut assignment = vec![UNMATCHED; cand.len()];
    if combination_estimate(&slots) <= SEARCH_BUDGET {
        let mut best = usize::MAX;
        search(&slots, 0, &mut assignment, &mut best);
        (matches, best)
    } else {
        for slot in &slots {
            for q in 0..slot.quota {
                assignment[slot.cand_positions[q]] = slot.ref_positions[q];
            }
        }
        (matches, count_chunks(&assignment))
    }
}

fn combination_estimate(slots: &[WordSlots]) -> u64 {
    let mut total: u64 = 1;
    for s in slots {
        let c = binomial(s.cand_positions.len(), s.quota)
            .saturating_mul(binomial(s.ref_positions.len(), s.quota))
            .saturating_mul(factorial(s.quota));
        total = total.saturating_mul(c);
        if total > SEARCH_BUDGET {
            return u64::MAX;
        }
    }
    total
}

fn binomial(n: usize, k: usize) -> u64 {
    let mut acc: u64 = 1;
    for i in 0..k {
        acc = acc.saturating_mul((n - i) as u64) / (i as u64 + 1);
    }
    acc
}

fn factorial(n: usize) -> u64 {
    (1..=n as u64).fold(1, u64::saturating_mul)
}

fn search(slots: &[WordSlots], word: usize, assignment: &mut [usize], best: &mut usize) {
    if word == slots.len() {
        *best = (*best).min(count_chunks(assignment));
        return;
    }
    let slot = &slots[word];
    let mut used_refs = vec![false; slot.ref_positions.len()];
    assign_word(slot, 0, slot.quota, &mut used_refs, slots, word, assignment, best);
}

/// Enumerate which candidate occurrences of one word match which reference
/// occurrences. `occ` walks the candidate occurrence list; `left` matches
/// remain to be placed.
#[allow(clippy::too_many_arguments)]
fn assign_word(
    slot: &WordSlots,
    occ: usize,
    left: usize,
    used_refs: &mut [bool],
    slots: &[WordSlots],
    word: usize,
    assignment: &mut [usize],
    best: &mut usize,
) {
    if left == 0 {
        search(slots, word + 1, assignment, best);
        return;
    }
    let remaining_occ = slot.cand_positions.len() - occ;
    if remaining_occ < left {
        return;
    }
    let pos = slot.cand_positions[occ];
    // Skip this occurrence if quota still fits in the rest.
    if remaining_occ > left {
        assign_word(slot, occ + 1, left, used_refs, slots, word, assignment, best);
    }
    for r in 0..slot.ref_positions.len() {
        if used_refs[r] {
            continue;
        }
        used_refs[r] = true;
        assignment[pos] = slot.ref_positions[r];
        assign_word(slot, occ + 1, left - 1, used_refs, slots, word, assignment, best);
        assignment[pos] = UNMATCHED;
        used_refs[r] = false;
    }
}

/// A chunk is a maximal run of candidate positions that are consecutive and
/// mapped to consecutive reference positions.
fn count_chunks(assignment: &[usize]) -> usize {
    let mut chunks = 0;
    let mut prev: Option<(usize, usize)> = None;
    for (i, &j) in assignment.iter().enumerate() {
        if j == UNMATCHED {
            prev = None;
            continue;
        }
        let continues = matches!(prev, Some((pi, pj)) if pi + 1 == i && pj + 1 == j);
        if !continues {
            chunks += 1;
        }
        prev = Some((i, j));
    }
    chunks
}

#[cfg(test)]
mod tests {
    use super::*;

    fn words(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn identical_sentences_form_one_chunk() {
        assert_eq!(align(&words("a b c d"), &words("a b c d")), (4, 1));
    }

    #[test]
    fn swap_makes_two_chunks() {
        assert_eq!(align(&words("a b"), &words("b a")), (2, 2));
    }

    #[test]
    fn duplicates_prefer_the_contiguous_pairing() {
        // "the" appears twice; the chunk-minimal alignment pairs them so the
        // whole sentence is two chunks, not three.
        let c = words("the cat the dog");
        let r = words("the dog the cat");
        let (m, ch) = align(&c, &r);
        assert_eq!(m, 4);
        assert_eq!(ch, 2);
    }

    #[test]
    fn unmatched_gap_breaks_chunks() {
        assert_eq!(align(&words("a x b"), &words("a b")), (2, 2));
    }

    #[test]
    fn quota_limits_matches() {
        assert_eq!(align(&words("a a a"), &words("a")).0, 1);
    }

    #[test]
    fn heavy_repetition_falls_back_gracefully() {
        let c: Vec<String> = (0..40).map(|_| "a".to_string()).collect();
        let r: Vec<String> = (0..40).map(|_| "a".to_string()).collect();
        assert_eq!(align(&c, &r), (40, 1));
    }
}
