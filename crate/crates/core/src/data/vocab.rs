//! Word vocabulary with reserved control ids.
//!
//! Tokenization is lowercase + whitespace split, with `. , ; :` detached as
//! their own tokens. Ids are assigned by descending corpus count, ties broken
//! lexicographically, starting after the four reserved ids.

use std::collections::HashMap;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::data::Caption;
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;

const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];
const DETACHED: [char; 4] = ['.', ',', ';', ':'];

/// Bidirectional token ↔ id map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    token_to_id: HashMap<String, u32>,
    id_to_token: Vec<String>,
}

/// Lowercase, detach `. , ; :`, split on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let lower = text.to_lowercase();
    let mut spaced = String::with_capacity(lower.len() + 8);
    for ch in lower.chars() {
        if DETACHED.contains(&ch) {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        } else {
            spaced.push(ch);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

/// Join words with single spaces (the inverse of [`tokenize`] for texts that
/// were produced by it).
pub fn detokenize(words: &[String]) -> String {
    words.join(" ")
}

/// Count words over the corpus and assign ids to every word with
/// count ≥ `min_count`: descending count, ties lexicographic.
pub fn build_vocabulary(captions: &[String], min_count: usize) -> Result<Vocabulary> {
    if captions.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut counts: HashMap<String, usize> = HashMap::new();
    for text in captions {
        for word in tokenize(text) {
            *counts.entry(word).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(String, usize)> =
        counts.into_iter().filter(|(_, c)| *c >= min_count).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
    id_to_token.extend(ranked.into_iter().map(|(w, _)| w));
    let token_to_id = id_to_token
        .iter()
        .enumerate()
        .map(|(i, w)| (w.clone(), i as u32))
        .collect();
    Ok(Vocabulary { token_to_id, id_to_token })
}

impl Vocabulary {
    /// Total number of ids, reserved ones included.
    pub fn size(&self) -> usize {
        self.id_to_token.len()
    }

    pub fn encode_word(&self, word: &str) -> u32 {
        self.token_to_id.get(word).copied().unwrap_or(UNK)
    }

    pub fn decode_id(&self, id: u32) -> Option<&str> {
        self.id_to_token.get(id as usize).map(String::as_str)
    }

    /// Tokenize `text` and wrap in BOS/EOS.
    pub fn encode_caption(&self, text: &str, max_caption_len: usize) -> Result<Caption> {
        let mut ids = vec![BOS];
        ids.extend(tokenize(text).iter().map(|w| self.encode_word(w)));
        ids.push(EOS);
        Caption::new(ids, max_caption_len)
    }

    /// Detokenized caption body, reserved ids skipped.
    pub fn decode_caption(&self, caption: &Caption) -> String {
        let words: Vec<String> = caption
            .body()
            .iter()
            .filter(|&&id| id > UNK || id == UNK)
            .map(|&id| self.decode_id(id).unwrap_or("<unk>").to_string())
            .collect();
        detokenize(&words)
    }

    /// Caption body as word strings (for the metric suite).
    pub fn caption_words(&self, caption: &Caption) -> Vec<String> {
        caption
            .body()
            .iter()
            .map(|&id| self.decode_id(id).unwrap_or("<unk>").to_string())
            .collect()
    }

    pub fn to_json(&self) -> serde_json::Value {
        let reserved: IndexMap<&str, u32> =
            [("pad", PAD), ("bos", BOS), ("eos", EOS), ("unk", UNK)].into_iter().collect();
        let tokens: IndexMap<String, u32> = self
            .id_to_token
            .iter()
            .enumerate()
            .skip(RESERVED.len())
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        serde_json::json!({ "reserved": reserved, "tokens": tokens })
    }

    pub fn from_json(value: &serde_json::Value) -> Result<Vocabulary> {
        #[derive(Deserialize, Serialize)]
        struct File {
            reserved: IndexMap<String, u32>,
            tokens: IndexMap<String, u32>,
        }
        let file: File = serde_json::from_value(value.clone())?;
        for (name, expect) in [("pad", PAD), ("bos", BOS), ("eos", EOS), ("unk", UNK)] {
            if file.reserved.get(name) != Some(&expect) {
                return Err(Error::InvalidSpec(format!(
                    "vocabulary file: reserved id `{name}` must be {expect}"
                )));
            }
        }
        let mut pairs: Vec<(String, u32)> = file.tokens.into_iter().collect();
        pairs.sort_by_key(|(_, id)| *id);
        let mut id_to_token: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        for (expected, (word, id)) in pairs.iter().enumerate() {
            if *id as usize != expected + RESERVED.len() {
                return Err(Error::InvalidSpec(format!(
                    "vocabulary file: id {id} for `{word}` is not contiguous"
                )));
            }
            id_to_token.push(word.clone());
        }
        let token_to_id = id_to_token
            .iter()
            .enumerate()
            .map(|(i, w)| (w.clone(), i as u32))
            .collect();
        Ok(Vocabulary { token_to_id, id_to_token })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_detaches_punctuation_and_lowercases() {
        assert_eq!(
            tokenize("Tubular adenocarcinoma, well differentiated."),
            vec!["tubular", "adenocarcinoma", ",", "well", "differentiated", "."]
        );
    }

    #[test]
    fn id_order_follows_count_then_lexicographic() {
        let v = build_vocabulary(&["a b".into(), "a c".into()], 1).unwrap();
        // "a" has count 2 -> first non-reserved id.
        assert_eq!(v.encode_word("a"), 4);
        assert_eq!(v.encode_word("b"), 5);
        assert_eq!(v.encode_word("c"), 6);
        assert_eq!(v.size(), 7);
    }

    #[test]
    fn min_count_threshold_drops_rare_words() {
        let v = build_vocabulary(&["a b".into(), "a c".into()], 2).unwrap();
        assert_eq!(v.size(), 5);
        assert_eq!(v.encode_word("a"), 4);
        assert_eq!(v.encode_word("b"), UNK);
    }

    #[test]
    fn empty_corpus_is_an_error() {
        assert!(matches!(build_vocabulary(&[], 1), Err(Error::EmptyCorpus)));
    }

    #[test]
    fn encode_decode_round_trip() {
        let v = build_vocabulary(&["alpha beta gamma".into()], 1).unwrap();
        for w in ["alpha", "beta", "gamma"] {
            assert_eq!(v.decode_id(v.encode_word(w)), Some(w));
        }
    }

    #[test]
    fn json_round_trip() {
        let v = build_vocabulary(&["a b c".into(), "a b".into()], 1).unwrap();
        let back = Vocabulary::from_json(&v.to_json()).unwrap();
        assert_eq!(v, back);
    }
}
