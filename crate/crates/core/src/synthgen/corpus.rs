use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Split, SynthError, ToyCorpus, ToyDatasetConfig};
use crate::features::{load_audio, write_wav, AudioClip, TARGET_SAMPLE_RATE};
use crate::symbolic::{read_roll, write_roll, InstrumentMap, Pianoroll};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub split: Split,
    /// Paths relative to the corpus root.
    pub audio: String,
    pub roll: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusManifest {
    pub config_hash: String,
    pub instrument_map: InstrumentMap,
    pub config: Option<ToyDatasetConfig>,
    pub entries: Vec<ManifestEntry>,
}

/// One aligned pair loaded back from disk.
#[derive(Clone, Debug)]
pub struct CorpusPair {
    pub name: String,
    pub split: Split,
    pub audio: AudioClip,
    pub roll: Pianoroll,
}

/// Write `corpus` under `dir`: one directory per split, `<name>.wav` + `<name>.roll` per clip,
/// and a manifest at the root.
pub fn write_corpus(corpus: &ToyCorpus, dir: &Path) -> Result<CorpusManifest, SynthError> {
    let mut entries = Vec::with_capacity(corpus.clips.len());
    for split in [Split::Train, Split::Val, Split::Test] {
        fs::create_dir_all(dir.join(split.dir_name()))?;
    }
    for clip in &corpus.clips {
        let base = format!("{}/{}", clip.split.dir_name(), clip.name);
        let entry = ManifestEntry {
            name: clip.name.clone(),
            split: clip.split,
            audio: format!("{base}.wav"),
            roll: format!("{base}.roll"),
        };
        fs::write(dir.join(&entry.audio), write_wav(&clip.audio))?;
        fs::write(dir.join(&entry.roll), write_roll(&clip.roll))?;
        entries.push(entry);
    }
    let manifest = CorpusManifest {
        config_hash: corpus.config.hash(),
        instrument_map: corpus.config.instrument_map.clone(),
        config: Some(corpus.config.clone()),
        entries,
    };
    let json =
        serde_json::to_vec_pretty(&manifest).map_err(|e| SynthError::Corpus(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), json)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<CorpusManifest, SynthError> {
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    serde_json::from_slice(&bytes).map_err(|e| SynthError::Corpus(format!("bad manifest: {e}")))
}

/// Load every pair listed in the manifest under `dir`, optionally restricted to one split.
pub fn read_corpus(
    dir: &Path,
    split: Option<Split>,
) -> Result<(CorpusManifest, Vec<CorpusPair>), SynthError> {
    let manifest = read_manifest(dir)?;
    let mut pairs = Vec::new();
    for e in manifest
        .entries
        .iter()
        .filter(|e| split.is_none_or(|s| s == e.split))
    {
        let audio = load_audio(&fs::read(dir.join(&e.audio))?, TARGET_SAMPLE_RATE)
            .map_err(|err| SynthError::Corpus(format!("{}: {err}", e.audio)))?;
        let roll = read_roll(&fs::read(dir.join(&e.roll))?)
            .map_err(|err| SynthError::Corpus(format!("{}: {err}", e.roll)))?;
        if roll.instrument_map() != &manifest.instrument_map {
            return Err(SynthError::Corpus(format!(
                "{}: instrument map differs from manifest",
                e.roll
            )));
        }
        pairs.push(CorpusPair {
            name: e.name.clone(),
            split: e.split,
            audio,
            roll,
        });
    }
    Ok((manifest, pairs))
}
