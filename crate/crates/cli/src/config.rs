//! Run configuration: a TOML file, then command-line overrides, then one hash.

use std::path::Path;

use disentangle::eval::{AucPooling, ScoreSource};
use disentangle::models::{ModelConfig, ModelKind};
use disentangle::symbolic::{InstrumentMap, DEFAULT_CHUNK_FRAMES};
use disentangle::synthgen::ToyDatasetConfig;
use disentangle::training::{ProbeTrainConfig, TrainConfig};
use disentangle::transfer::TimbreTimeMode;
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ModelSize {
    /// The reference widths.
    #[default]
    Full,
    /// Narrow networks for single-core experiments.
    Toy,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MapName {
    /// Five synthetic instruments.
    #[default]
    Toy,
    /// The eleven instrument slots used for rearrangement.
    Rearrangement,
    /// All 128 General MIDI programs.
    GeneralMidi,
}

impl MapName {
    pub fn build(self) -> InstrumentMap {
        match self {
            MapName::Toy => InstrumentMap::toy(),
            MapName::Rearrangement => InstrumentMap::rearrangement(),
            MapName::GeneralMidi => InstrumentMap::general_midi(),
        }
    }
}

/// Toy corpus knobs exposed to config files; the rest come from the toy preset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSection {
    pub clips: usize,
    pub clip_seconds: f64,
    pub max_polyphony: usize,
    pub activity: f64,
    pub rest_probability: f64,
    pub silent_clip_probability: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        let t = ToyDatasetConfig::toy(100, 0);
        Self {
            clips: t.num_clips,
            clip_seconds: t.clip_seconds,
            max_polyphony: t.max_polyphony,
            activity: t.activity,
            rest_probability: t.rest_probability,
            silent_clip_probability: t.silent_clip_probability,
        }
    }
}

/// Everything a command needs besides its file paths.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    /// The one seed every random choice of a run derives from.
    pub seed: u64,
    pub model: ModelKind,
    pub model_size: ModelSize,
    pub instrument_map: MapName,
    pub chunk_frames: usize,
    pub threshold: f32,
    pub timbre_time_mode: TimbreTimeMode,
    pub source: ScoreSource,
    pub auc_pooling: AucPooling,
    pub synth: SynthSection,
    pub train: TrainConfig,
    pub probe: ProbeTrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelKind::Unet,
            model_size: ModelSize::Full,
            instrument_map: MapName::Toy,
            chunk_frames: DEFAULT_CHUNK_FRAMES,
            threshold: 0.5,
            timbre_time_mode: TimbreTimeMode::Average,
            source: ScoreSource::Probe,
            auc_pooling: AucPooling::Seconds,
            synth: SynthSection::default(),
            train: TrainConfig::default(),
            probe: ProbeTrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
    }

    /// Propagate the top-level seed and model kind into the nested sections.
    pub fn resolve(mut self) -> Self {
        self.train.seed = self.seed;
        self.train.model_kind = self.model;
        self.probe.seed = self.seed;
        self
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = self.instrument_map.build().num_instruments();
        let mut cfg = match self.model_size {
            ModelSize::Full => ModelConfig::new(self.model, m),
            ModelSize::Toy => ModelConfig::toy(self.model, m),
        };
        cfg.train_frames = self.chunk_frames;
        cfg
    }

    pub fn dataset_config(&self) -> ToyDatasetConfig {
        let s = &self.synth;
        ToyDatasetConfig {
            clip_seconds: s.clip_seconds,
            max_polyphony: s.max_polyphony,
            activity: s.activity,
            rest_probability: s.rest_probability,
            silent_clip_probability: s.silent_clip_probability,
            ..ToyDatasetConfig::toy(s.clips, self.seed)
        }
    }
}
