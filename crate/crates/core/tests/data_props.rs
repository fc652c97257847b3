//! Dataset-level properties: the redundancy argument (subtype recoverable
//! from any single patch), grammar/vocabulary consistency, and file
//! round-trips.

use std::f64::consts::PI;

use rand::Rng;
use sgmt_core::data::{
    build_vocabulary, generate_synthetic, load_dataset, save_dataset, tokenize, vocabulary_of,
    PatchImage, SyntheticSpec,
};
use sgmt_core::rng::derive_rng;

/// Independent grating renderer for the nearest-texture oracle. Kept separate
/// from the generator on purpose.
fn reference_grating(
    size: usize,
    channels: usize,
    orientation: f64,
    frequency: f64,
    phase: f64,
) -> Vec<f32> {
    let mut pixels = Vec::with_capacity(channels * size * size);
    for _c in 0..channels {
        for y in 0..size {
            for x in 0..size {
                let u = (x as f64 * orientation.cos() + y as f64 * orientation.sin()) / size as f64;
                let v = 0.5 + 0.38 * (2.0 * PI * frequency * u + phase).sin();
                pixels.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    pixels
}

fn l2(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum()
}

#[test]
fn subtype_is_recoverable_from_single_patches() {
    let spec = SyntheticSpec::with_defaults(4, 60, 77).unwrap();
    let records = generate_synthetic(&spec).unwrap();

    // Brute-force bank: for each subtype, render noise-free gratings over a
    // grid of frequency buckets and phases.
    let mut bank: Vec<(usize, Vec<f32>)> = Vec::new();
    for (s, sub) in spec.subtypes.iter().enumerate() {
        for scale in spec.freq_scales {
            for p in 0..16 {
                let phase = 2.0 * PI * p as f64 / 16.0;
                bank.push((
                    s,
                    reference_grating(
                        spec.patch_size,
                        spec.channels,
                        sub.orientation,
                        sub.frequency * scale,
                        phase,
                    ),
                ));
            }
        }
    }

    let mut tested = 0;
    let mut correct = 0;
    'outer: for record in &records {
        for patch in &record.patches {
            let nearest = bank
                .iter()
                .min_by(|a, b| l2(&a.1, patch.pixels()).total_cmp(&l2(&b.1, patch.pixels())))
                .unwrap()
                .0;
            tested += 1;
            if nearest == record.subtype as usize {
                correct += 1;
            }
            if tested == 200 {
                break 'outer;
            }
        }
    }
    let accuracy = correct as f64 / tested as f64;
    assert!(accuracy > 0.95, "nearest-texture accuracy {accuracy} on {tested} patches");
}

#[test]
fn vocabulary_matches_enumerated_grammar_words() {
    let spec = SyntheticSpec::with_defaults(4, 200, 7).unwrap();
    let records = generate_synthetic(&spec).unwrap();
    let vocab = vocabulary_of(&records).unwrap();

    // Oracle: enumerate every caption the grammar can produce and count
    // distinct words.
    let mut grammar_words: Vec<String> =
        spec.all_caption_variants().iter().flat_map(|t| tokenize(t)).collect();
    grammar_words.sort();
    grammar_words.dedup();
    assert_eq!(vocab.size(), grammar_words.len() + 4);
}

#[test]
fn hundred_records_round_trip_bit_exactly() {
    let mut spec = SyntheticSpec::with_defaults(3, 100, 5).unwrap();
    spec.patches_per_slide = (1, 4);
    spec.patch_size = 8;
    let records = generate_synthetic(&spec).unwrap();
    let vocab = vocabulary_of(&records).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_dataset(&records, &vocab, dir.path()).unwrap();
    let (loaded, loaded_vocab) = load_dataset(dir.path()).unwrap();
    assert_eq!(loaded_vocab, vocab);
    assert_eq!(loaded.len(), records.len());
    for (a, b) in records.iter().zip(&loaded) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.subtype, b.subtype);
        assert_eq!(a.caption, b.caption);
        assert_eq!(a.caption_text, b.caption_text);
        for (p, q) in a.patches.iter().zip(&b.patches) {
            // Bit-exact pixel comparison.
            let pa: Vec<u32> = p.pixels().iter().map(|v| v.to_bits()).collect();
            let qa: Vec<u32> = q.pixels().iter().map(|v| v.to_bits()).collect();
            assert_eq!(pa, qa);
        }
    }
}

#[test]
fn vocabulary_round_trips_random_word_sets() {
    let mut rng = derive_rng(9, "vocab-prop");
    for _ in 0..50 {
        let n = rng.gen_range(1..20);
        let words: Vec<String> = (0..n).map(|_| format!("w{}", rng.gen_range(0..30))).collect();
        let corpus = vec![words.join(" ")];
        let vocab = build_vocabulary(&corpus, 1).unwrap();
        for w in &words {
            assert_eq!(vocab.decode_id(vocab.encode_word(w)), Some(w.as_str()));
        }
    }
}

#[test]
fn patches_are_valid_images() {
    let mut spec = SyntheticSpec::with_defaults(2, 10, 123).unwrap();
    spec.patches_per_slide = (1, 3);
    for record in generate_synthetic(&spec).unwrap() {
        for patch in &record.patches {
            // Construction re-validates range and finiteness.
            PatchImage::new(patch.channels(), patch.size(), patch.pixels().to_vec()).unwrap();
        }
    }
}
