//! Dataset directory layout.
//!
//! `manifest.json` lists records (id, subtype, caption string, patch file
//! names, patch size, channels); each patch is a raw little-endian float32
//! blob named `<id>_<k>.f32` in channel-major order. `vocab.json` pins the
//! token ids so captions re-tokenize identically on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::synth::MAX_CAPTION_LEN;
use crate::data::{PatchImage, Vocabulary, WsiRecord};
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize)]
struct ManifestRecord {
    id: String,
    subtype: u32,
    caption: String,
    patch_files: Vec<String>,
    patch_size: usize,
    channels: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    records: Vec<ManifestRecord>,
}

/// Write `records` and the vocabulary into `dir` (created if missing).
pub fn save_dataset(records: &[WsiRecord], vocab: &Vocabulary, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = Manifest { records: Vec::with_capacity(records.len()) };
    for record in records {
        let mut patch_files = Vec::with_capacity(record.patches.len());
        let (mut patch_size, mut channels) = (0, 0);
        for (k, patch) in record.patches.iter().enumerate() {
            let name = format!("{}_{k}.f32", record.id);
            let mut bytes = Vec::with_capacity(patch.pixels().len() * 4);
            for v in patch.pixels() {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            fs::write(dir.join(&name), bytes)?;
            patch_files.push(name);
            patch_size = patch.size();
            channels = patch.channels();
        }
        manifest.records.push(ManifestRecord {
            id: record.id.clone(),
            subtype: record.subtype,
            caption: record.caption_text.clone(),
            patch_files,
            patch_size,
            channels,
        });
    }
    fs::write(dir.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    fs::write(dir.join("vocab.json"), serde_json::to_vec_pretty(&vocab.to_json())?)?;
    Ok(())
}

/// Read a dataset directory back. Errors name the first offending record.
pub fn load_dataset(dir: &Path) -> Result<(Vec<WsiRecord>, Vocabulary)> {
    let manifest: Manifest = serde_json::from_slice(&fs::read(dir.join("manifest.json"))?)?;
    let vocab_value: serde_json::Value = serde_json::from_slice(&fs::read(dir.join("vocab.json"))?)?;
    let vocab = Vocabulary::from_json(&vocab_value)?;

    let mut records = Vec::with_capacity(manifest.records.len());
    for (index, entry) in manifest.records.iter().enumerate() {
        let offending = |reason: String| Error::DatasetRecord { index, reason };
        if entry.patch_files.is_empty() {
            return Err(offending("no patches listed".into()));
        }
        let expected = entry.channels * entry.patch_size * entry.patch_size * 4;
        let mut patches = Vec::with_capacity(entry.patch_files.len());
        for name in &entry.patch_files {
            let bytes = fs::read(dir.join(name))
                .map_err(|e| offending(format!("patch blob `{name}`: {e}")))?;
            if bytes.len() != expected {
                return Err(offending(format!(
                    "patch blob `{name}` has {} bytes, expected {expected}",
                    bytes.len()
                )));
            }
            let pixels: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
                .collect();
            let patch = PatchImage::new(entry.channels, entry.patch_size, pixels)
                .map_err(|e| offending(format!("patch blob `{name}`: {e}")))?;
            patches.push(patch);
        }
        let caption = vocab
            .encode_caption(&entry.caption, MAX_CAPTION_LEN)
            .map_err(|e| offending(format!("caption: {e}")))?;
        records.push(WsiRecord {
            id: entry.id.clone(),
            patches,
            caption,
            caption_text: entry.caption.clone(),
            subtype: entry.subtype,
        });
    }
    Ok((records, vocab))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, vocabulary_of, SyntheticSpec};

    #[test]
    fn empty_dataset_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let vocab = crate::data::build_vocabulary(&["a".into()], 1).unwrap();
        save_dataset(&[], &vocab, dir.path()).unwrap();
        let (records, loaded) = load_dataset(dir.path()).unwrap();
        assert!(records.is_empty());
        assert_eq!(loaded, vocab);
    }

    #[test]
    fn single_record_round_trips() {
        let mut spec = SyntheticSpec::with_defaults(2, 1, 3).unwrap();
        spec.patches_per_slide = (1, 1);
        let records = generate_synthetic(&spec).unwrap();
        let vocab = vocabulary_of(&records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&records, &vocab, dir.path()).unwrap();
        let (loaded, _) = load_dataset(dir.path()).unwrap();
        assert_eq!(loaded, records);
    }

    #[test]
    fn corrupt_blob_names_the_record() {
        let mut spec = SyntheticSpec::with_defaults(2, 3, 4).unwrap();
        spec.patches_per_slide = (2, 2);
        let records = generate_synthetic(&spec).unwrap();
        let vocab = vocabulary_of(&records).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&records, &vocab, dir.path()).unwrap();
        std::fs::write(dir.path().join("slide-0001_0.f32"), b"short").unwrap();
        match load_dataset(dir.path()) {
            Err(Error::DatasetRecord { index, .. }) => assert_eq!(index, 1),
            other => panic!("expected DatasetRecord error, got {other:?}"),
        }
    }
}
