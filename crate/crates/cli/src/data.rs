//! Datasets on disk: toy corpora written by `synth-data` and chunk archives
//! written by `prepare`, with an optional content-addressed CQT cache.

use std::fs;
use std::path::{Path, PathBuf};

use disentangle::digest::sha256_hex;
use disentangle::features::{compute_cqt, load_audio, AudioClip, CqtMatrix, TARGET_SAMPLE_RATE};
use disentangle::symbolic::{chunk_pair, read_cqt, read_roll, write_cqt, InstrumentMap, Pianoroll};
use disentangle::synthgen::{read_manifest, Split, MANIFEST_FILE};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

/// Directory for cached CQTs, keyed by the digest of the audio bytes.
pub const CACHE_ENV: &str = "DISENTANGLE_CACHE_DIR";

pub const ARCHIVE_FORMAT: &str = "chunk-archive";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkEntry {
    pub name: String,
    pub cqt: String,
    pub roll: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChunkManifest {
    pub format: String,
    pub chunk_frames: usize,
    pub instrument_map: InstrumentMap,
    pub chunks: Vec<ChunkEntry>,
}

/// Aligned CQT and roll.
pub struct Example {
    pub cqt: CqtMatrix,
    pub roll: Pianoroll,
}

pub struct Dataset {
    pub instrument_map: InstrumentMap,
    pub examples: Vec<Example>,
}

impl Dataset {
    pub fn pairs(&self) -> Vec<(&CqtMatrix, &Pianoroll)> {
        self.examples.iter().map(|e| (&e.cqt, &e.roll)).collect()
    }

    /// Non-overlapping training windows of `frames` frames.
    pub fn chunks(&self, frames: usize) -> Result<Vec<(CqtMatrix, Pianoroll)>> {
        let mut out = Vec::new();
        for e in &self.examples {
            out.extend(chunk_pair(&e.cqt, &e.roll, frames)?);
        }
        Ok(out)
    }
}

pub fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| CliError::io(parent, e))?;
    }
    fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

fn cache_dir() -> Option<PathBuf> {
    std::env::var_os(CACHE_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
}

/// Decode audio bytes and compute their CQT, going through the cache when one is configured.
pub fn cqt_of_audio(bytes: &[u8]) -> Result<CqtMatrix> {
    let cached = cache_dir().map(|d| d.join(format!("{}.cqt", sha256_hex(bytes))));
    if let Some(path) = &cached {
        if let Ok(b) = fs::read(path) {
            if let Ok(cqt) = read_cqt(&b) {
                return Ok(cqt);
            }
        }
    }
    let cqt = compute_cqt(&load_audio(bytes, TARGET_SAMPLE_RATE)?)?;
    if let Some(path) = &cached {
        // a cache that cannot be written is only a missed optimisation
        let _ = write(path, &write_cqt(&cqt));
    }
    Ok(cqt)
}

pub fn load_clip(path: &Path) -> Result<AudioClip> {
    Ok(load_audio(&read(path)?, TARGET_SAMPLE_RATE)?)
}

/// Load a toy corpus (only `split`) or a chunk archive (everything).
pub fn load_dataset(dir: &Path, split: Split) -> Result<Dataset> {
    let manifest_path = dir.join(MANIFEST_FILE);
    let bytes = read(&manifest_path)?;
    if let Ok(archive) = serde_json::from_slice::<ChunkManifest>(&bytes) {
        if archive.format != ARCHIVE_FORMAT {
            return Err(CliError::Data(format!(
                "{}: unknown format {:?}",
                manifest_path.display(),
                archive.format
            )));
        }
        let mut examples = Vec::with_capacity(archive.chunks.len());
        for c in &archive.chunks {
            let cqt = read_cqt(&read(&dir.join(&c.cqt))?)?;
            let roll = read_roll(&read(&dir.join(&c.roll))?)?;
            examples.push(Example { cqt, roll });
        }
        return Ok(Dataset {
            instrument_map: archive.instrument_map,
            examples,
        });
    }
    let manifest = read_manifest(dir)?;
    let mut examples = Vec::new();
    for e in manifest.entries.iter().filter(|e| e.split == split) {
        let cqt = cqt_of_audio(&read(&dir.join(&e.audio))?)?;
        let roll = read_roll(&read(&dir.join(&e.roll))?)?;
        examples.push(Example { cqt, roll });
    }
    Ok(Dataset {
        instrument_map: manifest.instrument_map,
        examples,
    })
}

/// Digest over every file below `dir`, in sorted relative-path order.
pub fn tree_digest(dir: &Path) -> Result<String> {
    let mut files = Vec::new();
    walk(dir, &mut files)?;
    files.sort();
    let mut all = Vec::new();
    for f in files {
        let rel = f.strip_prefix(dir).expect("walked below dir");
        all.extend_from_slice(rel.to_string_lossy().as_bytes());
        all.push(0);
        all.extend(read(&f)?);
    }
    Ok(sha256_hex(&all))
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        if p.is_dir() {
            walk(&p, out)?;
        } else {
            out.push(p);
        }
    }
    Ok(())
}

/// Files in `dir` with one of `extensions`, keyed by file stem.
pub fn files_by_stem(dir: &Path, extensions: &[&str]) -> Result<Vec<(String, PathBuf)>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| CliError::io(dir, e))? {
        let p = entry.map_err(|e| CliError::io(dir, e))?.path();
        let ext = p
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase);
        if p.is_file() && ext.is_some_and(|e| extensions.contains(&e.as_str())) {
            let stem = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or_default()
                .to_string();
            out.push((stem, p));
        }
    }
    out.sort();
    Ok(out)
}
