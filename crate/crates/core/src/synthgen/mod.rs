//! Additive-synthesis toy corpora and roll rendering.

mod corpus;

use std::collections::BTreeSet;
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::config_hash;
use crate::features::{bin_frequency, AudioClip, TARGET_SAMPLE_RATE};
use crate::symbolic::{
    events_to_pianoroll, InstrumentMap, NoteEvent, Pianoroll, DEFAULT_FRAME_RATE, HIGHEST_PITCH,
    LOWEST_PITCH,
};

pub use corpus::{
    read_corpus, read_manifest, write_corpus, CorpusManifest, CorpusPair, ManifestEntry,
    MANIFEST_FILE,
};

const PEAK: f32 = 0.9;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("unknown composition style {0:?}")]
    UnknownStyle(String),
    #[error("style {style:?} needs instrument {instrument:?}, which the instrument map lacks")]
    StyleUnavailable { style: String, instrument: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("corpus error: {0}")]
    Corpus(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimbreSpec {
    pub name: String,
    /// Relative amplitudes of partials 1, 2, 3, ...
    pub harmonic_amps: Vec<f64>,
    pub attack_s: f64,
    pub release_s: f64,
}

impl TimbreSpec {
    pub fn new(
        name: &str,
        harmonic_amps: &[f64],
        attack_s: f64,
        release_s: f64,
    ) -> Result<Self, SynthError> {
        let spec = Self {
            name: name.to_string(),
            harmonic_amps: harmonic_amps.to_vec(),
            attack_s,
            release_s,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: &str| {
            Err(SynthError::InvalidConfig(format!(
                "timbre {}: {m}",
                self.name
            )))
        };
        if self.harmonic_amps.len() < 4 {
            return bad("needs at least 4 partial amplitudes");
        }
        if !(self.harmonic_amps[0] > 0.0) || self.harmonic_amps.iter().any(|a| !(*a >= 0.0)) {
            return bad("fundamental must be positive and all amplitudes nonnegative");
        }
        if !(self.attack_s >= 0.0 && self.release_s >= 0.0) {
            return bad("envelope times must be nonnegative");
        }
        Ok(())
    }

    /// Five spectrally distinct timbres matching [`InstrumentMap::toy`].
    pub fn toy_set() -> Vec<TimbreSpec> {
        vec![
            Self::new("piano", &[1.0, 0.55, 0.3, 0.15, 0.08, 0.04], 0.005, 0.08),
            Self::new(
                "acoustic guitar",
                &[1.0, 0.0, 0.7, 0.0, 0.45, 0.0, 0.25],
                0.005,
                0.05,
            ),
            Self::new(
                "violin",
                &[0.6, 0.9, 1.0, 0.8, 0.7, 0.6, 0.5, 0.4],
                0.04,
                0.06,
            ),
            Self::new("cello", &[0.35, 1.0, 0.15, 0.7, 0.05, 0.4], 0.04, 0.06),
            Self::new("flute", &[1.0, 0.08, 0.03, 0.01], 0.03, 0.04),
        ]
        .into_iter()
        .map(|t| t.expect("built-in timbre is valid"))
        .collect()
    }
}

/// Knobs of the synthetic corpus generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ToyDatasetConfig {
    pub num_clips: usize,
    pub clip_seconds: f64,
    pub instrument_map: InstrumentMap,
    /// One per instrument index.
    pub timbres: Vec<TimbreSpec>,
    /// Inclusive MIDI pitch range per instrument.
    pub pitch_ranges: Vec<(u8, u8)>,
    /// Simultaneous voices per active instrument, drawn uniformly from `1..=max_polyphony`.
    pub max_polyphony: usize,
    pub tempo_range: (f64, f64),
    /// Probability that an instrument plays in a clip.
    pub activity: f64,
    /// Probability that a voice rests instead of starting a note.
    pub rest_probability: f64,
    /// Probability of a fully silent clip.
    pub silent_clip_probability: f64,
    /// When set, each clip draws its instruments from one of these sets.
    pub instrument_sets: Option<Vec<Vec<usize>>>,
    pub seed: u64,
}

impl ToyDatasetConfig {
    pub fn toy(num_clips: usize, seed: u64) -> Self {
        Self {
            num_clips,
            clip_seconds: 10.0,
            instrument_map: InstrumentMap::toy(),
            timbres: TimbreSpec::toy_set(),
            pitch_ranges: vec![(45, 84), (40, 76), (55, 88), (36, 67), (60, 93)],
            max_polyphony: 2,
            tempo_range: (80.0, 140.0),
            activity: 0.5,
            rest_probability: 0.35,
            silent_clip_probability: 0.05,
            instrument_sets: None,
            seed,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        let m = self.instrument_map.num_instruments();
        if self.timbres.len() != m || self.pitch_ranges.len() != m {
            return bad(format!("need {m} timbres and pitch ranges"));
        }
        for t in &self.timbres {
            t.validate()?;
        }
        for &(lo, hi) in &self.pitch_ranges {
            if lo > hi || lo < LOWEST_PITCH || hi > HIGHEST_PITCH {
                return bad(format!("pitch range ({lo}, {hi}) outside [21, 108]"));
            }
        }
        if !(self.clip_seconds > 0.0) || self.max_polyphony == 0 {
            return bad("clip_seconds and max_polyphony must be positive".into());
        }
        if !(self.tempo_range.0 > 0.0 && self.tempo_range.0 <= self.tempo_range.1) {
            return bad("invalid tempo range".into());
        }
        if let Some(sets) = &self.instrument_sets {
            if sets.is_empty() || sets.iter().flatten().any(|&i| i >= m) {
                return bad(
                    "instrument sets must be non-empty and index existing instruments".into(),
                );
            }
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        config_hash(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn dir_name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Clone, Debug)]
pub struct ToyClip {
    pub name: String,
    pub split: Split,
    pub events: Vec<NoteEvent>,
    pub audio: AudioClip,
    pub roll: Pianoroll,
}

#[derive(Clone, Debug)]
pub struct ToyCorpus {
    pub config: ToyDatasetConfig,
    pub clips: Vec<ToyClip>,
}

impl ToyCorpus {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ToyClip> {
        self.clips.iter().filter(move |c| c.split == split)
    }
}

/// 80/10/10 split by clip index.
pub fn split_of(index: usize, num_clips: usize) -> Split {
    let train = num_clips * 8 / 10;
    let val = num_clips / 10;
    if index < train {
        Split::Train
    } else if index < train + val {
        Split::Val
    } else {
        Split::Test
    }
}

/// Sum of partials under a linear attack/release envelope for every note run in `roll`.
pub fn render_pianoroll(
    roll: &Pianoroll,
    timbres: &[TimbreSpec],
    sample_rate: u32,
) -> Result<AudioClip, SynthError> {
    if timbres.len() != roll.num_instruments() {
        return Err(SynthError::InvalidConfig(format!(
            "{} timbres for {} instruments",
            timbres.len(),
            roll.num_instruments()
        )));
    }
    let sr = sample_rate as f64;
    let n = (roll.frames() as f64 / roll.frame_rate() * sr).round() as usize;
    let mut out = vec![0f64; n];
    let nyquist = sr / 2.0;
    for (m, timbre) in timbres.iter().enumerate() {
        for (f, s, e) in crate::symbolic::note_segments(roll, m) {
            let onset = s as f64 / roll.frame_rate();
            let offset = e as f64 / roll.frame_rate();
            let f0 = bin_frequency(f).expect("roll rows are piano keys");
            let first = (onset * sr).ceil() as usize;
            let last = (((offset + timbre.release_s) * sr).ceil() as usize).min(n);
            let partials: Vec<(f64, f64)> = timbre
                .harmonic_amps
                .iter()
                .enumerate()
                .map(|(k, &a)| ((k + 1) as f64 * f0, a))
                .filter(|&(freq, a)| freq < nyquist && a > 0.0)
                .collect();
            for (i, slot) in out.iter_mut().enumerate().take(last).skip(first) {
                let t = i as f64 / sr;
                let env = envelope(t, onset, offset, timbre.attack_s, timbre.release_s);
                if env == 0.0 {
                    continue;
                }
                let local = t - onset;
                let v: f64 = partials
                    .iter()
                    .map(|&(freq, a)| a * (2.0 * PI * freq * local).sin())
                    .sum();
                *slot += env * v;
            }
        }
    }
    let peak = out.iter().fold(0f64, |p, v| p.max(v.abs()));
    let gain = if peak > 0.0 { PEAK as f64 / peak } else { 0.0 };
    Ok(AudioClip::new(
        out.into_iter().map(|v| (v * gain) as f32).collect(),
        sample_rate,
    ))
}

fn envelope(t: f64, onset: f64, offset: f64, attack: f64, release: f64) -> f64 {
    let rise = |x: f64| {
        if attack > 0.0 {
            (x / attack).clamp(0.0, 1.0)
        } else {
            1.0
        }
    };
    if t < onset {
        0.0
    } else if t < offset {
        rise(t - onset)
    } else if release > 0.0 {
        rise(offset - onset) * (1.0 - (t - offset) / release).max(0.0)
    } else {
        0.0
    }
}

/// Instruments that make up a named composition style.
pub fn style_preset(name: &str, map: &InstrumentMap) -> Result<BTreeSet<usize>, SynthError> {
    let melody = if map.index_of("flute").is_some() {
        "flute"
    } else {
        "violin"
    };
    let members: Vec<&str> = match name {
        "strings" => vec!["violin", "cello"],
        "piano" => vec!["piano"],
        "acoustic" => vec!["acoustic guitar", melody],
        "band" => vec!["electric guitar", "bass", melody],
        other => return Err(SynthError::UnknownStyle(other.to_string())),
    };
    members
        .into_iter()
        .map(|inst| {
            map.index_of(inst)
                .ok_or_else(|| SynthError::StyleUnavailable {
                    style: name.to_string(),
                    instrument: inst.to_string(),
                })
        })
        .collect()
}

fn clip_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

/// Random note events for one clip played by `instruments`.
pub fn generate_events(
    cfg: &ToyDatasetConfig,
    instruments: &[usize],
    rng: &mut impl Rng,
) -> Vec<NoteEvent> {
    let tempo = rng.gen_range(cfg.tempo_range.0..=cfg.tempo_range.1);
    let beat = 60.0 / tempo;
    let mut events = Vec::new();
    for &m in instruments {
        let (lo, hi) = cfg.pitch_ranges[m];
        let voices = rng.gen_range(1..=cfg.max_polyphony);
        for _ in 0..voices {
            let mut t = rng.gen_range(0.0..beat);
            while t < cfg.clip_seconds {
                if rng.gen_bool(cfg.rest_probability) {
                    t += beat * [1.0, 2.0, 3.0][rng.gen_range(0..3)];
                    continue;
                }
                let dur = beat * [0.5, 1.0, 1.5, 2.0][rng.gen_range(0..4)];
                let offset = (t + dur).min(cfg.clip_seconds);
                events.push(NoteEvent {
                    pitch: rng.gen_range(lo..=hi),
                    onset: t,
                    offset,
                    instrument: m,
                    velocity: rng.gen_range(60..=110),
                });
                t += dur;
            }
        }
    }
    events
}

fn choose_instruments(cfg: &ToyDatasetConfig, rng: &mut impl Rng) -> Vec<usize> {
    if rng.gen_bool(cfg.silent_clip_probability) {
        return Vec::new();
    }
    if let Some(sets) = &cfg.instrument_sets {
        return sets[rng.gen_range(0..sets.len())].clone();
    }
    let m = cfg.instrument_map.num_instruments();
    loop {
        let chosen: Vec<usize> = (0..m).filter(|_| rng.gen_bool(cfg.activity)).collect();
        if !chosen.is_empty() {
            return chosen;
        }
    }
}

/// Render one clip from explicit note events.
pub fn synthesize_clip(
    cfg: &ToyDatasetConfig,
    name: &str,
    split: Split,
    events: Vec<NoteEvent>,
) -> ToyClip {
    let roll = events_to_pianoroll(
        &events,
        DEFAULT_FRAME_RATE,
        cfg.clip_seconds,
        &cfg.instrument_map,
    );
    let audio =
        render_pianoroll(&roll, &cfg.timbres, TARGET_SAMPLE_RATE).expect("config validated");
    ToyClip {
        name: name.to_string(),
        split,
        events,
        audio,
        roll,
    }
}

/// Clip `index` of the corpus described by `cfg`; depends only on `(seed, index)`.
pub fn generate_clip(cfg: &ToyDatasetConfig, index: usize) -> ToyClip {
    let mut rng = clip_rng(cfg.seed, index);
    let instruments = choose_instruments(cfg, &mut rng);
    let events = generate_events(cfg, &instruments, &mut rng);
    let clip = synthesize_clip(
        cfg,
        &format!("clip_{index:05}"),
        split_of(index, cfg.num_clips),
        events,
    );
    debug_assert_eq!(
        events_to_pianoroll(
            &clip.events,
            DEFAULT_FRAME_RATE,
            cfg.clip_seconds,
            &cfg.instrument_map
        ),
        clip.roll
    );
    clip
}

/// Generate every clip of a corpus in memory.
pub fn generate_toy_dataset(cfg: &ToyDatasetConfig) -> Result<ToyCorpus, SynthError> {
    cfg.validate()?;
    let clips = (0..cfg.num_clips).map(|i| generate_clip(cfg, i)).collect();
    Ok(ToyCorpus {
        config: cfg.clone(),
        clips,
    })
}
