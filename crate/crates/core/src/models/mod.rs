//! DuoED and UnetED encoder/decoder networks and the latent probe.

pub mod blocks;
mod checkpoint;
mod network;
mod probe;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::CqtMatrix;
use crate::nn::{Mode, Module, Param, Tensor};
use crate::symbolic::{InstrumentMap, Pianoroll, PITCH_BINS};

pub use blocks::SeqDecoder;
pub use checkpoint::{
    read_checkpoint, write_checkpoint, CheckpointHeader, RawCheckpoint, CHECKPOINT_VERSION,
};
pub use network::{Encoder, EncoderCache, RollDecoder, RollDecoderCache};
pub use probe::{column_buckets, Probe, ProbeCache};

/// Time and frequency reduction of the encoders.
pub const DOWNSAMPLE: usize = 8;
/// Frequency rows of the latent feature map (88 / 8).
pub const LATENT_FREQ: usize = PITCH_BINS / DOWNSAMPLE;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("bad input shape: {0}")]
    BadInputShape(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("skip shape mismatch: {0}")]
    SkipShapeMismatch(String),
    #[error("invalid model configuration: {0}")]
    InvalidConfig(String),
    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),
    #[error("checkpoint version mismatch: {0}")]
    VersionMismatch(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Duo,
    Unet,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Duo => "duo",
            ModelKind::Unet => "unet",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "duo" => Ok(ModelKind::Duo),
            "unet" => Ok(ModelKind::Unet),
            other => Err(format!(
                "unknown model kind {other:?} (expected duo or unet)"
            )),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Output channels of the four residual blocks; the last is the latent channel count C.
    pub channels: [usize; 4],
    pub time_downsample: usize,
    pub freq_downsample: usize,
    pub slope: f32,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            channels: [32, 64, 128, 32],
            time_downsample: DOWNSAMPLE,
            freq_downsample: DOWNSAMPLE,
            slope: 0.01,
        }
    }
}

impl EncoderConfig {
    pub fn latent_channels(&self) -> usize {
        self.channels[3]
    }

    /// Rows κ of a latent code.
    pub fn kappa(&self) -> usize {
        LATENT_FREQ * self.latent_channels()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub kind: ModelKind,
    pub encoder: EncoderConfig,
    /// Hidden width of the timbre and pitch decoders.
    pub head_hidden: usize,
    pub instruments: usize,
    /// Frame count of a training chunk, for the latent size constraint.
    pub train_frames: usize,
}

impl ModelConfig {
    pub fn new(kind: ModelKind, instruments: usize) -> Self {
        Self {
            kind,
            encoder: EncoderConfig::default(),
            head_hidden: 128,
            instruments,
            train_frames: crate::symbolic::DEFAULT_CHUNK_FRAMES,
        }
    }

    /// Narrow variant for single-core toy experiments.
    pub fn toy(kind: ModelKind, instruments: usize) -> Self {
        Self {
            encoder: EncoderConfig {
                channels: [8, 16, 32, 8],
                ..EncoderConfig::default()
            },
            head_hidden: 32,
            ..Self::new(kind, instruments)
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let e = &self.encoder;
        if e.time_downsample != DOWNSAMPLE || e.freq_downsample != DOWNSAMPLE {
            return Err(ModelError::InvalidConfig(
                "only 8× time and frequency downsampling is supported".into(),
            ));
        }
        if e.channels.contains(&0) || self.head_hidden == 0 || self.instruments == 0 {
            return Err(ModelError::InvalidConfig(
                "channel counts must be positive".into(),
            ));
        }
        if self.train_frames == 0 || self.train_frames % DOWNSAMPLE != 0 {
            return Err(ModelError::InvalidConfig(format!(
                "train_frames {} must be a positive multiple of {DOWNSAMPLE}",
                self.train_frames
            )));
        }
        let (kappa, tau) = (e.kappa(), self.train_frames / DOWNSAMPLE);
        if kappa * tau >= PITCH_BINS * self.train_frames {
            return Err(ModelError::InvalidConfig(format!(
                "latent code {kappa}×{tau} is not smaller than the {PITCH_BINS}×{} input",
                self.train_frames
            )));
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        crate::digest::config_hash(self)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeKind {
    Timbre,
    Pitch,
}

/// A latent matrix `(κ, τ)`; row `c·11 + f` holds channel `c` at latent frequency `f`.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentCode {
    data: Vec<f32>,
    kappa: usize,
    tau: usize,
    pub kind: CodeKind,
    pub downsample_factor: usize,
}

impl LatentCode {
    pub fn from_vec(data: Vec<f32>, kappa: usize, tau: usize, kind: CodeKind) -> Self {
        assert_eq!(data.len(), kappa * tau);
        assert_eq!(
            kappa % LATENT_FREQ,
            0,
            "κ must be a multiple of {LATENT_FREQ}"
        );
        Self {
            data,
            kappa,
            tau,
            kind,
            downsample_factor: DOWNSAMPLE,
        }
    }

    fn from_feature_map(t: &Tensor, kind: CodeKind) -> Self {
        let (_, c, h, w) = t.dims4();
        Self::from_vec(t.data().to_vec(), c * h, w, kind)
    }

    pub fn rows(&self) -> usize {
        self.kappa
    }

    pub fn cols(&self) -> usize {
        self.tau
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.tau + col]
    }

    /// Batch-of-one feature map `(1, C, 11, τ)`.
    pub fn feature_map(&self) -> Tensor {
        Tensor::from_vec(
            &[1, self.kappa / LATENT_FREQ, LATENT_FREQ, self.tau],
            self.data.clone(),
        )
    }

    /// Same values with the time axis replaced.
    pub fn with_columns(&self, data: Vec<f32>, tau: usize) -> Self {
        Self::from_vec(data, self.kappa, tau, self.kind)
    }
}

/// Encoder activations handed to the UnetED decoder, finest level first.
#[derive(Clone, Debug, PartialEq)]
pub struct SkipStack {
    /// Each `(1, channels, freq, time)`.
    pub levels: Vec<Tensor>,
}

impl SkipStack {
    fn from_cache(cache: &EncoderCache) -> Self {
        Self {
            levels: cache.skips().iter().map(|t| (*t).clone()).collect(),
        }
    }

    pub fn zeroed(&self) -> Self {
        Self {
            levels: self
                .levels
                .iter()
                .map(|t| Tensor::zeros(t.shape()))
                .collect(),
        }
    }
}

/// Row-major real matrix (instrument or pitch logits over time, probe outputs).
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f32>,
}

impl Matrix {
    pub fn get(&self, r: usize, c: usize) -> f32 {
        self.data[r * self.cols + c]
    }

    fn from_row_tensor(t: &Tensor) -> Self {
        let (_, c, h, w) = t.dims4();
        Self {
            rows: c * h,
            cols: w,
            data: t.data().to_vec(),
        }
    }

    pub fn crop_cols(&self, cols: usize) -> Matrix {
        let data = (0..self.rows)
            .flat_map(|r| {
                self.data[r * self.cols..r * self.cols + cols]
                    .iter()
                    .copied()
            })
            .collect();
        Matrix {
            rows: self.rows,
            cols,
            data,
        }
    }
}

/// Pianoroll logits for one clip, stored instrument-major `(M, 88, T)`.
#[derive(Clone, Debug, PartialEq)]
pub struct RollLogits {
    data: Vec<f32>,
    frames: usize,
    instruments: usize,
}

impl RollLogits {
    pub fn from_vec(data: Vec<f32>, frames: usize, instruments: usize) -> Self {
        assert_eq!(data.len(), instruments * PITCH_BINS * frames);
        Self {
            data,
            frames,
            instruments,
        }
    }

    /// Logical shape `(88, T, M)`.
    pub fn shape(&self) -> (usize, usize, usize) {
        (PITCH_BINS, self.frames, self.instruments)
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn instruments(&self) -> usize {
        self.instruments
    }

    pub fn get(&self, f: usize, t: usize, m: usize) -> f32 {
        self.data[(m * PITCH_BINS + f) * self.frames + t]
    }

    /// Raw `(M, 88, T)` payload.
    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn crop(&self, frames: usize) -> RollLogits {
        let rows = self.instruments * PITCH_BINS;
        let data = (0..rows)
            .flat_map(|r| {
                self.data[r * self.frames..r * self.frames + frames]
                    .iter()
                    .copied()
            })
            .collect();
        RollLogits::from_vec(data, frames, self.instruments)
    }

    /// σ of every logit, same layout.
    pub fn probabilities(&self) -> Vec<f32> {
        self.data.iter().map(|&x| sigmoid(x)).collect()
    }

    /// Cells whose probability reaches `threshold` become active.
    pub fn binarize(&self, threshold: f32, frame_rate: f64, map: &InstrumentMap) -> Pianoroll {
        assert_eq!(map.num_instruments(), self.instruments);
        let mut roll = Pianoroll::zeros(self.frames, frame_rate, map.clone());
        for m in 0..self.instruments {
            for f in 0..PITCH_BINS {
                for t in 0..self.frames {
                    if sigmoid(self.get(f, t, m)) >= threshold {
                        roll.set(f, t, m, true);
                    }
                }
            }
        }
        roll
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Named parameter group used for gradient routing.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Group {
    #[serde(rename = "E_t")]
    TimbreEncoder,
    #[serde(rename = "E_p")]
    PitchEncoder,
    #[serde(rename = "E_cqt")]
    CqtEncoder,
    #[serde(rename = "D_roll")]
    RollDecoder,
    #[serde(rename = "D_t")]
    TimbreDecoder,
    #[serde(rename = "D_p")]
    PitchDecoder,
}

impl Group {
    pub fn name(self) -> &'static str {
        match self {
            Group::TimbreEncoder => "E_t",
            Group::PitchEncoder => "E_p",
            Group::CqtEncoder => "E_cqt",
            Group::RollDecoder => "D_roll",
            Group::TimbreDecoder => "D_t",
            Group::PitchDecoder => "D_p",
        }
    }
}

pub const DUO_GROUPS: [Group; 5] = [
    Group::TimbreEncoder,
    Group::PitchEncoder,
    Group::RollDecoder,
    Group::TimbreDecoder,
    Group::PitchDecoder,
];
pub const UNET_GROUPS: [Group; 4] = [
    Group::CqtEncoder,
    Group::RollDecoder,
    Group::TimbreDecoder,
    Group::PitchDecoder,
];

/// Right-pad with zero frames to a multiple of the downsample factor; returns the pad.
pub fn pad_to_multiple(cqt: &CqtMatrix) -> (CqtMatrix, usize) {
    let pad = (DOWNSAMPLE - cqt.frames() % DOWNSAMPLE) % DOWNSAMPLE;
    if pad == 0 {
        (cqt.clone(), 0)
    } else {
        (cqt.pad_frames(pad), pad)
    }
}

fn check_input(cqt: &CqtMatrix) -> Result<(), ModelError> {
    if cqt.bins() != PITCH_BINS {
        return Err(ModelError::BadInputShape(format!(
            "expected {PITCH_BINS} bins, got {}",
            cqt.bins()
        )));
    }
    if cqt.frames() == 0 || cqt.frames() % DOWNSAMPLE != 0 {
        return Err(ModelError::BadInputShape(format!(
            "frame count {} is not a positive multiple of {DOWNSAMPLE}; pad first",
            cqt.frames()
        )));
    }
    Ok(())
}

/// Stack equally long CQT matrices into an `(n, 1, 88, T)` batch.
pub fn cqt_batch(items: &[&CqtMatrix]) -> Tensor {
    let frames = items[0].frames();
    let mut data = Vec::with_capacity(items.len() * PITCH_BINS * frames);
    for c in items {
        assert_eq!(c.frames(), frames, "batch items differ in length");
        data.extend_from_slice(c.data());
    }
    Tensor::from_vec(&[items.len(), 1, PITCH_BINS, frames], data)
}

/// View an `(n, C, 11, τ)` feature map as `(n, κ, 1, τ)` rows.
pub fn code_rows(z: &Tensor) -> Tensor {
    let (n, c, h, w) = z.dims4();
    z.clone().reshape(&[n, c * h, 1, w])
}

/// Inverse of [`code_rows`].
pub fn code_map(rows: &Tensor, channels: usize) -> Tensor {
    let (n, k, _, w) = rows.dims4();
    rows.clone().reshape(&[n, channels, k / channels, w])
}

fn timbre_head(rng: &mut ChaCha8Rng, cfg: &ModelConfig, cin: usize, cout: usize) -> SeqDecoder {
    SeqDecoder::new(rng, cin, cfg.head_hidden, cout, 3, cfg.encoder.slope)
}

fn check_code(z: &LatentCode, kappa: usize) -> Result<(), ModelError> {
    if z.rows() != kappa || z.cols() == 0 {
        return Err(ModelError::ShapeMismatch(format!(
            "expected a ({kappa}, τ) code, got ({}, {})",
            z.rows(),
            z.cols()
        )));
    }
    Ok(())
}

fn run_head(head: &SeqDecoder, z: &LatentCode) -> Matrix {
    let rows = code_rows(&z.feature_map());
    Matrix::from_row_tensor(&head.forward(&rows).0)
}

fn roll_logits_of(y: &Tensor) -> RollLogits {
    let (_, m, _, t) = y.dims4();
    RollLogits::from_vec(y.data().to_vec(), t, m)
}

/// Two encoders (timbre, pitch), a shared roll decoder over the stacked codes,
/// and per-code decoders.
#[derive(Clone, Debug)]
pub struct DuoEd {
    pub config: ModelConfig,
    pub e_t: Encoder,
    pub e_p: Encoder,
    pub d_roll: RollDecoder,
    pub d_t: SeqDecoder,
    pub d_p: SeqDecoder,
}

impl DuoEd {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let kappa = cfg.encoder.kappa();
        Self {
            config: cfg.clone(),
            e_t: Encoder::new(rng, &cfg.encoder),
            e_p: Encoder::new(rng, &cfg.encoder),
            d_roll: RollDecoder::new(
                rng,
                &cfg.encoder,
                2 * cfg.encoder.latent_channels(),
                cfg.instruments,
                false,
            ),
            d_t: timbre_head(rng, cfg, kappa, cfg.instruments),
            d_p: timbre_head(rng, cfg, kappa, PITCH_BINS),
        }
    }

    /// Eval-mode `(Z_t, Z_p)`; `T` must be a multiple of 8.
    pub fn encode(&self, cqt: &CqtMatrix) -> Result<(LatentCode, LatentCode), ModelError> {
        check_input(cqt)?;
        let x = cqt_batch(&[cqt]);
        let zt = self.e_t.forward(&x, Mode::Eval).0;
        let zp = self.e_p.forward(&x, Mode::Eval).0;
        Ok((
            LatentCode::from_feature_map(&zt, CodeKind::Timbre),
            LatentCode::from_feature_map(&zp, CodeKind::Pitch),
        ))
    }

    /// `D_roll([Z_t; Z_p])` → `(88, 8τ, M)` logits.
    pub fn decode_roll(&self, zt: &LatentCode, zp: &LatentCode) -> Result<RollLogits, ModelError> {
        let kappa = self.config.encoder.kappa();
        check_code(zt, kappa)?;
        check_code(zp, kappa)?;
        if zt.cols() != zp.cols() {
            return Err(ModelError::ShapeMismatch(format!(
                "code lengths {} and {} differ",
                zt.cols(),
                zp.cols()
            )));
        }
        let z = crate::nn::concat_channels(&zt.feature_map(), &zp.feature_map());
        Ok(roll_logits_of(&self.d_roll.forward(&z, None, Mode::Eval).0))
    }

    pub fn decode_timbre(&self, z: &LatentCode) -> Result<Matrix, ModelError> {
        check_code(z, self.config.encoder.kappa())?;
        Ok(run_head(&self.d_t, z))
    }

    pub fn decode_pitch(&self, z: &LatentCode) -> Result<Matrix, ModelError> {
        check_code(z, self.config.encoder.kappa())?;
        Ok(run_head(&self.d_p, z))
    }
}

/// One encoder with skip connections into the roll decoder; the timbre and
/// (adversarial) pitch decoders read its bottleneck code.
#[derive(Clone, Debug)]
pub struct UnetEd {
    pub config: ModelConfig,
    pub e_cqt: Encoder,
    pub d_roll: RollDecoder,
    pub d_t: SeqDecoder,
    pub d_p: SeqDecoder,
}

impl UnetEd {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let kappa = cfg.encoder.kappa();
        Self {
            config: cfg.clone(),
            e_cqt: Encoder::new(rng, &cfg.encoder),
            d_roll: RollDecoder::new(
                rng,
                &cfg.encoder,
                cfg.encoder.latent_channels(),
                cfg.instruments,
                true,
            ),
            d_t: timbre_head(rng, cfg, kappa, cfg.instruments),
            d_p: timbre_head(rng, cfg, kappa, PITCH_BINS),
        }
    }

    pub fn encode(&self, cqt: &CqtMatrix) -> Result<(LatentCode, SkipStack), ModelError> {
        check_input(cqt)?;
        let (z, cache) = self.e_cqt.forward(&cqt_batch(&[cqt]), Mode::Eval);
        Ok((
            LatentCode::from_feature_map(&z, CodeKind::Timbre),
            SkipStack::from_cache(&cache),
        ))
    }

    pub fn decode_roll(
        &self,
        zt: &LatentCode,
        skips: &SkipStack,
    ) -> Result<RollLogits, ModelError> {
        check_code(zt, self.config.encoder.kappa())?;
        let channels = self.e_cqt.skip_channels();
        if skips.levels.len() != 3 {
            return Err(ModelError::SkipShapeMismatch(format!(
                "expected 3 levels, got {}",
                skips.levels.len()
            )));
        }
        let frames = zt.cols() * DOWNSAMPLE;
        for (i, level) in skips.levels.iter().enumerate() {
            let want = [1, channels[i], PITCH_BINS >> i, frames >> i];
            if level.shape() != want {
                return Err(ModelError::SkipShapeMismatch(format!(
                    "level {i}: expected {want:?}, got {:?}",
                    level.shape()
                )));
            }
        }
        let s = &skips.levels;
        Ok(roll_logits_of(
            &self
                .d_roll
                .forward(&zt.feature_map(), Some([&s[0], &s[1], &s[2]]), Mode::Eval)
                .0,
        ))
    }

    pub fn decode_timbre(&self, z: &LatentCode) -> Result<Matrix, ModelError> {
        check_code(z, self.config.encoder.kappa())?;
        Ok(run_head(&self.d_t, z))
    }

    pub fn decode_pitch(&self, z: &LatentCode) -> Result<Matrix, ModelError> {
        check_code(z, self.config.encoder.kappa())?;
        Ok(run_head(&self.d_p, z))
    }
}

#[derive(Clone, Debug)]
pub enum Network {
    Duo(DuoEd),
    Unet(UnetEd),
}

/// A network plus the number of optimizer steps it has seen.
#[derive(Clone, Debug)]
pub struct Model {
    pub net: Network,
    pub steps_trained: u64,
}

/// Eval-mode outputs for one clip, cropped to its original length.
#[derive(Clone, Debug)]
pub struct Prediction {
    pub roll: RollLogits,
    pub timbre: Matrix,
    pub pitch: Matrix,
    /// Timbre code of the padded input.
    pub z_t: LatentCode,
    pub pad: usize,
}

impl Model {
    pub fn new(cfg: &ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let net = match cfg.kind {
            ModelKind::Duo => Network::Duo(DuoEd::new(cfg, &mut rng)),
            ModelKind::Unet => Network::Unet(UnetEd::new(cfg, &mut rng)),
        };
        Ok(Self {
            net,
            steps_trained: 0,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        match &self.net {
            Network::Duo(m) => &m.config,
            Network::Unet(m) => &m.config,
        }
    }

    pub fn kind(&self) -> ModelKind {
        self.config().kind
    }

    pub fn groups(&self) -> &'static [Group] {
        match self.kind() {
            ModelKind::Duo => &DUO_GROUPS,
            ModelKind::Unet => &UNET_GROUPS,
        }
    }

    pub fn group(&self, g: Group) -> Option<&dyn Module> {
        match (&self.net, g) {
            (Network::Duo(m), Group::TimbreEncoder) => Some(&m.e_t),
            (Network::Duo(m), Group::PitchEncoder) => Some(&m.e_p),
            (Network::Duo(m), Group::RollDecoder) => Some(&m.d_roll),
            (Network::Duo(m), Group::TimbreDecoder) => Some(&m.d_t),
            (Network::Duo(m), Group::PitchDecoder) => Some(&m.d_p),
            (Network::Unet(m), Group::CqtEncoder) => Some(&m.e_cqt),
            (Network::Unet(m), Group::RollDecoder) => Some(&m.d_roll),
            (Network::Unet(m), Group::TimbreDecoder) => Some(&m.d_t),
            (Network::Unet(m), Group::PitchDecoder) => Some(&m.d_p),
            _ => None,
        }
    }

    pub fn group_mut(&mut self, g: Group) -> Option<&mut dyn Module> {
        match (&mut self.net, g) {
            (Network::Duo(m), Group::TimbreEncoder) => Some(&mut m.e_t),
            (Network::Duo(m), Group::PitchEncoder) => Some(&mut m.e_p),
            (Network::Duo(m), Group::RollDecoder) => Some(&mut m.d_roll),
            (Network::Duo(m), Group::TimbreDecoder) => Some(&mut m.d_t),
            (Network::Duo(m), Group::PitchDecoder) => Some(&mut m.d_p),
            (Network::Unet(m), Group::CqtEncoder) => Some(&mut m.e_cqt),
            (Network::Unet(m), Group::RollDecoder) => Some(&mut m.d_roll),
            (Network::Unet(m), Group::TimbreDecoder) => Some(&mut m.d_t),
            (Network::Unet(m), Group::PitchDecoder) => Some(&mut m.d_p),
            _ => None,
        }
    }

    /// Snapshot of the parameter values of one group, in visiting order.
    pub fn group_values(&self, g: Group) -> Vec<Tensor> {
        let mut out = Vec::new();
        if let Some(m) = self.group(g) {
            m.visit_params("", &mut |_, p| out.push(p.value.clone()));
        }
        out
    }

    /// Latent column rate for a given frame rate.
    pub fn column_rate(frame_rate: f64) -> f64 {
        frame_rate / DOWNSAMPLE as f64
    }

    /// Pad, run the full network in eval mode and crop back to the input length.
    pub fn predict(&self, cqt: &CqtMatrix) -> Result<Prediction, ModelError> {
        if cqt.bins() != PITCH_BINS || cqt.frames() == 0 {
            return Err(ModelError::BadInputShape(format!(
                "expected (88, T>0), got ({}, {})",
                cqt.bins(),
                cqt.frames()
            )));
        }
        let frames = cqt.frames();
        let (padded, pad) = pad_to_multiple(cqt);
        let (roll, timbre, pitch, z_t) = match &self.net {
            Network::Duo(m) => {
                let (zt, zp) = m.encode(&padded)?;
                (
                    m.decode_roll(&zt, &zp)?,
                    m.decode_timbre(&zt)?,
                    m.decode_pitch(&zp)?,
                    zt,
                )
            }
            Network::Unet(m) => {
                let (zt, skips) = m.encode(&padded)?;
                // the UnetED pitch decoder is adversarial; it still reads Z_t
                (
                    m.decode_roll(&zt, &skips)?,
                    m.decode_timbre(&zt)?,
                    m.decode_pitch(&zt)?,
                    zt,
                )
            }
        };
        Ok(Prediction {
            roll: roll.crop(frames),
            timbre: timbre.crop_cols(frames),
            pitch: pitch.crop_cols(frames),
            z_t,
            pad,
        })
    }

    /// Eval-mode timbre code of a padded input.
    pub fn timbre_code(&self, cqt: &CqtMatrix) -> Result<LatentCode, ModelError> {
        let (padded, _) = pad_to_multiple(cqt);
        match &self.net {
            Network::Duo(m) => Ok(m.encode(&padded)?.0),
            Network::Unet(m) => Ok(m.encode(&padded)?.0),
        }
    }

    /// Eval-mode pitch code (DuoED only).
    pub fn pitch_code(&self, cqt: &CqtMatrix) -> Result<Option<LatentCode>, ModelError> {
        let (padded, _) = pad_to_multiple(cqt);
        match &self.net {
            Network::Duo(m) => Ok(Some(m.encode(&padded)?.1)),
            Network::Unet(_) => Ok(None),
        }
    }
}

impl Module for Model {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for &g in self.groups() {
            self.group(g)
                .expect("listed group")
                .visit_params(&crate::nn::join(prefix, g.name()), f);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for &g in self.groups() {
            self.group_mut(g)
                .expect("listed group")
                .visit_params_mut(&crate::nn::join(prefix, g.name()), f);
        }
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &[f32])) {
        for &g in self.groups() {
            self.group(g)
                .expect("listed group")
                .visit_buffers(&crate::nn::join(prefix, g.name()), f);
        }
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f32])) {
        for &g in self.groups() {
            self.group_mut(g)
                .expect("listed group")
                .visit_buffers_mut(&crate::nn::join(prefix, g.name()), f);
        }
    }
}

#[cfg(test)]
mod tests;
