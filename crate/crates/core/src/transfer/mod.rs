//! Transcription and composition style transfer: the pitch content of a source
//! clip decoded with the timbre code of a target clip.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::{
    compute_cqt, resample, AudioClip, CqtMatrix, FeatureError, TARGET_SAMPLE_RATE,
};
use crate::models::{pad_to_multiple, LatentCode, Model, ModelError, Network, RollLogits};
use crate::symbolic::{project_pitch_roll, InstrumentMap, Pianoroll, PitchRoll};

#[derive(Debug, Error)]
pub enum TransferError {
    #[error("the model has not been trained (0 optimizer steps)")]
    UntrainedModel,
    #[error("no cell reaches threshold {threshold}; the rearranged roll is empty")]
    DegenerateOutput { threshold: f32 },
    #[error("clip is {seconds:.3} s long; at least 1 s is required")]
    ClipTooShort { seconds: f64 },
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How a target timbre code of a different length is fitted to the source timeline.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TimbreTimeMode {
    /// Time-average of the code, broadcast to every column.
    #[default]
    Average,
    /// The code repeated cyclically, then cut to length.
    Tile,
    /// The first columns; a short code is extended with its last column.
    Crop,
}

impl std::str::FromStr for TimbreTimeMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "average" => Ok(Self::Average),
            "tile" => Ok(Self::Tile),
            "crop" => Ok(Self::Crop),
            other => Err(format!(
                "unknown timbre time mode `{other}` (average|tile|crop)"
            )),
        }
    }
}

/// Fit a `(κ, τ_B)` code to `tau` columns. Codes that already have `tau` columns
/// are returned unchanged in every mode.
pub fn reconcile_code(z: &LatentCode, tau: usize, mode: TimbreTimeMode) -> LatentCode {
    let (rows, cols) = (z.rows(), z.cols());
    if cols == tau {
        return z.clone();
    }
    let data = match mode {
        TimbreTimeMode::Average => (0..rows)
            .flat_map(|r| {
                let mean = (0..cols).map(|c| z.get(r, c) as f64).sum::<f64>() / cols as f64;
                std::iter::repeat_n(mean as f32, tau)
            })
            .collect(),
        TimbreTimeMode::Tile => (0..rows)
            .flat_map(|r| (0..tau).map(move |c| z.get(r, c % cols)))
            .collect(),
        TimbreTimeMode::Crop => (0..rows)
            .flat_map(|r| (0..tau).map(move |c| z.get(r, c.min(cols - 1))))
            .collect(),
    };
    z.with_columns(data, tau)
}

fn prepare(clip: &AudioClip) -> Result<CqtMatrix, TransferError> {
    let seconds = clip.duration_s();
    if seconds < 1.0 {
        return Err(TransferError::ClipTooShort { seconds });
    }
    if clip.sample_rate == TARGET_SAMPLE_RATE {
        Ok(compute_cqt(clip)?)
    } else {
        let r = AudioClip::new(
            resample(&clip.samples, clip.sample_rate, TARGET_SAMPLE_RATE),
            TARGET_SAMPLE_RATE,
        );
        Ok(compute_cqt(&r)?)
    }
}

fn check_model(model: &Model, map: &InstrumentMap) -> Result<(), TransferError> {
    if model.steps_trained == 0 {
        return Err(TransferError::UntrainedModel);
    }
    if map.num_instruments() != model.config().instruments {
        return Err(TransferError::InvalidRequest(format!(
            "instrument map has {} entries, the model predicts {}",
            map.num_instruments(),
            model.config().instruments
        )));
    }
    Ok(())
}

fn check_threshold(threshold: f32) -> Result<(), TransferError> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(TransferError::InvalidRequest(format!(
            "threshold {threshold} is outside (0, 1)"
        )));
    }
    Ok(())
}

/// Soft and binarized transcription or rearrangement.
#[derive(Clone, Debug)]
pub struct RollOutput {
    pub roll: Pianoroll,
    pub logits: RollLogits,
}

impl RollOutput {
    /// `σ(logits)` in the `(M, 88, T)` layout of [`RollLogits`].
    pub fn soft(&self) -> Vec<f32> {
        self.logits.probabilities()
    }
}

/// Transcribe a CQT: forward pass, σ and threshold; the output has the input's length.
pub fn transcribe_cqt(
    model: &Model,
    cqt: &CqtMatrix,
    threshold: f32,
    map: &InstrumentMap,
) -> Result<RollOutput, TransferError> {
    check_model(model, map)?;
    check_threshold(threshold)?;
    let logits = model.predict(cqt)?.roll;
    Ok(RollOutput {
        roll: logits.binarize(threshold, cqt.frame_rate(), map),
        logits,
    })
}

pub fn transcribe(
    model: &Model,
    clip: &AudioClip,
    threshold: f32,
    map: &InstrumentMap,
) -> Result<Pianoroll, TransferError> {
    Ok(transcribe_cqt(model, &prepare(clip)?, threshold, map)?.roll)
}

/// Pitch content of `source` (A), timbre of `target` (B). The output follows A's
/// timeline. An all-zero result is reported as [`TransferError::DegenerateOutput`].
pub fn rearrange_cqt(
    model: &Model,
    source: &CqtMatrix,
    target: &CqtMatrix,
    threshold: f32,
    mode: TimbreTimeMode,
    map: &InstrumentMap,
) -> Result<RollOutput, TransferError> {
    check_model(model, map)?;
    check_threshold(threshold)?;
    let frames = source.frames();
    let (a, _) = pad_to_multiple(source);
    let (b, _) = pad_to_multiple(target);
    let logits = match &model.net {
        Network::Duo(m) => {
            let (_, zp_a) = m.encode(&a)?;
            let (zt_b, _) = m.encode(&b)?;
            m.decode_roll(&reconcile_code(&zt_b, zp_a.cols(), mode), &zp_a)?
        }
        Network::Unet(m) => {
            let (zt_a, skips_a) = m.encode(&a)?;
            let (zt_b, _) = m.encode(&b)?;
            m.decode_roll(&reconcile_code(&zt_b, zt_a.cols(), mode), &skips_a)?
        }
    }
    .crop(frames);
    let roll = logits.binarize(threshold, source.frame_rate(), map);
    if roll.active_cells() == 0 {
        return Err(TransferError::DegenerateOutput { threshold });
    }
    Ok(RollOutput { roll, logits })
}

#[derive(Clone, Debug)]
pub struct TransferRequest<'a> {
    /// Clip A, providing pitch content and the timeline.
    pub source: &'a AudioClip,
    /// Clip B, providing the timbre.
    pub target: &'a AudioClip,
    pub model: &'a Model,
    pub instrument_map: &'a InstrumentMap,
    pub threshold: f32,
    pub timbre_time_mode: TimbreTimeMode,
}

impl<'a> TransferRequest<'a> {
    pub fn new(
        source: &'a AudioClip,
        target: &'a AudioClip,
        model: &'a Model,
        instrument_map: &'a InstrumentMap,
    ) -> Self {
        Self {
            source,
            target,
            model,
            instrument_map,
            threshold: 0.5,
            timbre_time_mode: TimbreTimeMode::Average,
        }
    }
}

pub fn rearrange(req: &TransferRequest) -> Result<RollOutput, TransferError> {
    check_model(req.model, req.instrument_map)?;
    let a = prepare(req.source)?;
    let b = prepare(req.target)?;
    rearrange_cqt(
        req.model,
        &a,
        &b,
        req.threshold,
        req.timbre_time_mode,
        req.instrument_map,
    )
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PitchScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Cellwise agreement of the output's pitch projection with the source pitch roll.
pub fn pitch_preservation(
    source_pitch: &PitchRoll,
    output: &Pianoroll,
) -> Result<PitchScores, TransferError> {
    if source_pitch.frames != output.frames() {
        return Err(TransferError::LengthMismatch(format!(
            "source has {} frames, output {}",
            source_pitch.frames,
            output.frames()
        )));
    }
    let out = project_pitch_roll(output);
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (&s, &o) in source_pitch.data.iter().zip(&out.data) {
        match (s != 0, o != 0) {
            (true, true) => tp += 1,
            (false, true) => fp += 1,
            (true, false) => fneg += 1,
            (false, false) => {}
        }
    }
    let ratio = |n: u64, d: u64| if d == 0 { 0.0 } else { n as f64 / d as f64 };
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fneg);
    let f1 = if precision + recall == 0.0 {
        0.0
    } else {
        2.0 * precision * recall / (precision + recall)
    };
    Ok(PitchScores {
        precision,
        recall,
        f1,
    })
}

/// Fraction of active cells that lie in the given instrument slices.
pub fn style_fraction(roll: &Pianoroll, instruments: &std::collections::BTreeSet<usize>) -> f64 {
    let total = roll.active_cells();
    if total == 0 {
        return 0.0;
    }
    let (f, t, m) = roll.shape();
    let inside: usize = (0..m)
        .filter(|i| instruments.contains(i))
        .map(|i| {
            (0..f)
                .map(|p| (0..t).filter(|&x| roll.get(p, x, i)).count())
                .sum::<usize>()
        })
        .sum();
    inside as f64 / total as f64
}
