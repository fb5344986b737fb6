//! Losses, gradient-routed training steps, the epoch loop and probe training.

mod loss;
mod probe;
mod trainer;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::CqtMatrix;
use crate::models::{
    code_map, code_rows, cqt_batch, DuoEd, Group, Model, ModelError, ModelKind, Network, UnetEd,
};
use crate::nn::{concat_channels, split_channels, Mode, Module, Tensor};
use crate::symbolic::{project_instrument_roll, project_pitch_roll, Pianoroll, PITCH_BINS};

pub use loss::{adversarial_zero_grad, adversarial_zero_loss, bce_grad, bce_loss};
pub use probe::{
    clip_seconds, load_probe, probe_examples, probe_logits, save_probe, train_probe,
    train_probe_on, CodeSource, ProbeExample, ProbeSpec, ProbeTarget, ProbeTrainConfig,
};
pub use trainer::{LogRecord, Trainer};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("target value {0} is not binary")]
    NonBinaryTarget(f32),
    #[error("non-finite loss at step {step}: {report:?}")]
    NonFiniteLoss { step: u64, report: LossReport },
    #[error("invalid training configuration: {0}")]
    InvalidConfig(String),
    #[error("empty training set")]
    EmptyDataset,
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// How per-element losses are combined before differentiation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    /// Plain sum over elements.
    Sum,
    /// Each loss term divided by its element count.
    Mean,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps even if epochs remain.
    pub max_steps: Option<u64>,
    /// λ, the weight of the adversarial zero-target losses.
    pub adversarial_weight: f64,
    pub adversarial_enabled: bool,
    pub model_kind: ModelKind,
    pub seed: u64,
    /// Multiplicative learning-rate decay applied once per epoch (1 = constant).
    pub lr_decay: f64,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            momentum: 0.9,
            batch_size: 16,
            epochs: 10,
            max_steps: None,
            adversarial_weight: 1.0,
            adversarial_enabled: true,
            model_kind: ModelKind::Unet,
            seed: 0,
            lr_decay: 1.0,
            reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if !(self.adversarial_weight >= 0.0 && self.adversarial_weight.is_finite()) {
            return bad("adversarial_weight must be nonnegative");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        Ok(())
    }

    pub fn hash(&self) -> String {
        crate::digest::config_hash(self)
    }

    fn adversarial_active(&self) -> bool {
        self.adversarial_enabled && self.adversarial_weight > 0.0
    }
}

/// Per-element mean losses of one step. For UnetED, `l_t_n` is always 0 (no
/// adversarial timbre decoder exists).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub l_roll: f64,
    pub l_t: f64,
    pub l_p: f64,
    pub l_t_n: f64,
    pub l_p_n: f64,
}

impl LossReport {
    pub fn is_finite(&self) -> bool {
        [self.l_roll, self.l_t, self.l_p, self.l_t_n, self.l_p_n]
            .iter()
            .all(|v| v.is_finite())
    }

    /// `L_roll + L_t + L_p`.
    pub fn reconstruction(&self) -> f64 {
        self.l_roll + self.l_t + self.l_p
    }
}

/// A training batch of equally long chunks with all three targets.
#[derive(Clone, Debug)]
pub struct Batch {
    /// `(n, 1, 88, T)`.
    pub x: Tensor,
    /// `(n, M, 88, T)`.
    pub roll: Tensor,
    /// `(n, M, 1, T)`.
    pub instruments: Tensor,
    /// `(n, 88, 1, T)`.
    pub pitches: Tensor,
}

impl Batch {
    pub fn new(pairs: &[(&CqtMatrix, &Pianoroll)]) -> Result<Self, TrainError> {
        if pairs.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let frames = pairs[0].0.frames();
        let m = pairs[0].1.num_instruments();
        for (c, r) in pairs {
            if c.frames() != frames
                || r.frames() != frames
                || r.num_instruments() != m
                || c.bins() != PITCH_BINS
            {
                return Err(TrainError::ShapeMismatch(
                    "batch chunks differ in shape".into(),
                ));
            }
        }
        if frames % crate::models::DOWNSAMPLE != 0 {
            return Err(TrainError::ShapeMismatch(format!(
                "chunk length {frames} is not a multiple of 8"
            )));
        }
        let n = pairs.len();
        let x = cqt_batch(&pairs.iter().map(|p| p.0).collect::<Vec<_>>());
        let mut roll = Vec::with_capacity(n * m * PITCH_BINS * frames);
        let mut inst = Vec::with_capacity(n * m * frames);
        let mut pitch = Vec::with_capacity(n * PITCH_BINS * frames);
        for (_, r) in pairs {
            for mi in 0..m {
                for f in 0..PITCH_BINS {
                    roll.extend((0..frames).map(|t| r.get(f, t, mi) as u8 as f32));
                }
            }
            let ir = project_instrument_roll(r);
            inst.extend(ir.data.iter().map(|&v| v as f32));
            let pr = project_pitch_roll(r);
            pitch.extend(pr.data.iter().map(|&v| v as f32));
        }
        Ok(Self {
            x,
            roll: Tensor::from_vec(&[n, m, PITCH_BINS, frames], roll),
            instruments: Tensor::from_vec(&[n, m, 1, frames], inst),
            pitches: Tensor::from_vec(&[n, PITCH_BINS, 1, frames], pitch),
        })
    }
}

/// Which training phase just finished (for observers).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Start,
    /// Reconstruction step over the jointly trained groups.
    Joint,
    /// UnetED: `D_p` trained on a detached timbre code.
    PitchDecoder,
    /// Zero-target step on the encoders only.
    Adversarial,
}

/// The groups a phase may modify.
pub fn phase_groups(kind: ModelKind, phase: Phase) -> &'static [Group] {
    use Group::*;
    match (kind, phase) {
        (_, Phase::Start) => &[],
        (ModelKind::Duo, Phase::Joint) => &[
            TimbreEncoder,
            PitchEncoder,
            RollDecoder,
            TimbreDecoder,
            PitchDecoder,
        ],
        (ModelKind::Duo, Phase::Adversarial) => &[TimbreEncoder, PitchEncoder],
        (ModelKind::Duo, Phase::PitchDecoder) => &[],
        (ModelKind::Unet, Phase::Joint) => &[CqtEncoder, RollDecoder, TimbreDecoder],
        (ModelKind::Unet, Phase::PitchDecoder) => &[PitchDecoder],
        (ModelKind::Unet, Phase::Adversarial) => &[CqtEncoder],
    }
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Slot {
    Primary,
    Alternate,
}

/// Momentum SGD (`v ← μv + g; p ← p − ηv`) on every parameter of `module`.
fn sgd_step(module: &mut dyn Module, lr: f32, momentum: f32, slot: Slot) {
    module.visit_params_mut("", &mut |_, p| {
        let v = match slot {
            Slot::Primary => &mut p.velocity,
            Slot::Alternate => &mut p.alt_velocity,
        };
        for ((vi, &gi), pi) in v
            .data_mut()
            .iter_mut()
            .zip(p.grad.data())
            .zip(p.value.data_mut())
        {
            *vi = momentum * *vi + gi;
            *pi -= lr * *vi;
        }
    });
}

struct Term {
    mean: f64,
    grad: Tensor,
}

fn scale_for(reduction: Reduction, count: usize) -> f32 {
    match reduction {
        Reduction::Sum => 1.0,
        Reduction::Mean => 1.0 / count as f32,
    }
}

fn bce_term(
    logits: &Tensor,
    targets: &Tensor,
    reduction: Reduction,
    weight: f32,
) -> Result<Term, TrainError> {
    let sum = bce_loss(logits.data(), targets.data())?;
    let mut g = Tensor::from_vec(logits.shape(), bce_grad(logits.data(), targets.data())?);
    g.scale(weight * scale_for(reduction, logits.len()));
    Ok(Term {
        mean: sum / logits.len() as f64,
        grad: g,
    })
}

fn zero_term(logits: &Tensor, reduction: Reduction, weight: f32) -> Term {
    let sum = adversarial_zero_loss(logits.data());
    let mut g = Tensor::from_vec(logits.shape(), adversarial_zero_grad(logits.data()));
    g.scale(weight * scale_for(reduction, logits.len()));
    Term {
        mean: sum / logits.len() as f64,
        grad: g,
    }
}

fn zero_groups(model: &mut Model) {
    model.zero_grad();
}

fn step_groups(model: &mut Model, groups: &[Group], cfg: &TrainConfig, lr: f64, slot: Slot) {
    for &g in groups {
        let module = model.group_mut(g).expect("group belongs to the model");
        sgd_step(module, lr as f32, cfg.momentum as f32, slot);
    }
}

fn non_finite(model: &Model, report: LossReport) -> TrainError {
    TrainError::NonFiniteLoss {
        step: model.steps_trained,
        report,
    }
}

fn duo(model: &mut Model) -> &mut DuoEd {
    match &mut model.net {
        Network::Duo(m) => m,
        Network::Unet(_) => unreachable!("checked kind"),
    }
}

fn unet(model: &mut Model) -> &mut UnetEd {
    match &mut model.net {
        Network::Unet(m) => m,
        Network::Duo(_) => unreachable!("checked kind"),
    }
}

/// DuoED phase 1: all groups on `L_roll + L_t + L_p`. Also reports the
/// zero-target losses of the swapped decoders, without differentiating them.
fn duo_joint(m: &mut DuoEd, b: &Batch, red: Reduction) -> Result<LossReport, TrainError> {
    let (zt, ct) = m.e_t.forward(&b.x, Mode::Train);
    let (zp, cp) = m.e_p.forward(&b.x, Mode::Train);
    let c = zt.shape()[1];
    let (yr, cr) = m
        .d_roll
        .forward(&concat_channels(&zt, &zp), None, Mode::Train);
    let (yt, cht) = m.d_t.forward(&code_rows(&zt));
    let (yp, chp) = m.d_p.forward(&code_rows(&zp));
    let roll = bce_term(&yr, &b.roll, red, 1.0)?;
    let inst = bce_term(&yt, &b.instruments, red, 1.0)?;
    let pitch = bce_term(&yp, &b.pitches, red, 1.0)?;
    let report = LossReport {
        l_roll: roll.mean,
        l_t: inst.mean,
        l_p: pitch.mean,
        l_t_n: zero_term(&m.d_t.forward(&code_rows(&zp)).0, red, 1.0).mean,
        l_p_n: zero_term(&m.d_p.forward(&code_rows(&zt)).0, red, 1.0).mean,
    };
    if !report.is_finite() {
        return Ok(report);
    }
    let (dz, _) = m.d_roll.backward(&cr, &roll.grad, true);
    let (mut dzt, mut dzp) = split_channels(&dz, c);
    dzt.add_assign(&code_map(&m.d_t.backward(&cht, &inst.grad, true), c));
    dzp.add_assign(&code_map(&m.d_p.backward(&chp, &pitch.grad, true), c));
    m.e_t.backward(&ct, &dzt, None, true);
    m.e_p.backward(&cp, &dzp, None, true);
    m.e_t.commit_stats(&ct);
    m.e_p.commit_stats(&cp);
    m.d_roll.commit_stats(&cr);
    Ok(report)
}

/// DuoED phase 2: `λ(L_t^n + L_p^n)` differentiated into the encoders only.
/// Decoder gradients are not accumulated; batch statistics are not committed.
fn duo_adversarial(m: &mut DuoEd, b: &Batch, red: Reduction, lambda: f32) -> (f64, f64) {
    let (zt, ct) = m.e_t.forward(&b.x, Mode::Train);
    let (zp, cp) = m.e_p.forward(&b.x, Mode::Train);
    let c = zt.shape()[1];
    let (ytn, c1) = m.d_t.forward(&code_rows(&zp));
    let (ypn, c2) = m.d_p.forward(&code_rows(&zt));
    let tn = zero_term(&ytn, red, lambda);
    let pn = zero_term(&ypn, red, lambda);
    let dzp = code_map(&m.d_t.backward(&c1, &tn.grad, false), c);
    let dzt = code_map(&m.d_p.backward(&c2, &pn.grad, false), c);
    m.e_p.backward(&cp, &dzp, None, true);
    m.e_t.backward(&ct, &dzt, None, true);
    (tn.mean, pn.mean)
}

/// UnetED phase 1: `{E_cqt, D_roll, D_t}` on `L_roll + L_t`.
fn unet_joint(m: &mut UnetEd, b: &Batch, red: Reduction) -> Result<(f64, f64), TrainError> {
    let (z, ce) = m.e_cqt.forward(&b.x, Mode::Train);
    let c = z.shape()[1];
    let (yr, cr) = m.d_roll.forward(&z, Some(ce.skips()), Mode::Train);
    let (yt, cht) = m.d_t.forward(&code_rows(&z));
    let roll = bce_term(&yr, &b.roll, red, 1.0)?;
    let inst = bce_term(&yt, &b.instruments, red, 1.0)?;
    if !(roll.mean.is_finite() && inst.mean.is_finite()) {
        return Ok((roll.mean, inst.mean));
    }
    let (mut dz, dskips) = m.d_roll.backward(&cr, &roll.grad, true);
    dz.add_assign(&code_map(&m.d_t.backward(&cht, &inst.grad, true), c));
    m.e_cqt.backward(&ce, &dz, dskips.as_ref(), true);
    m.e_cqt.commit_stats(&ce);
    m.d_roll.commit_stats(&cr);
    Ok((roll.mean, inst.mean))
}

/// UnetED phase 2 (`D_p` on a detached code) and, when enabled, phase 3
/// (`λ·L_p^n` into `E_cqt` only). Returns `(L_p, L_p^n)`.
fn unet_pitch_phases(
    model: &mut Model,
    b: &Batch,
    cfg: &TrainConfig,
    lr: f64,
    observer: &mut dyn FnMut(Phase, &Model),
) -> Result<(f64, f64), TrainError> {
    let red = cfg.reduction;
    let (z, ce) = unet(model).e_cqt.forward(&b.x, Mode::Train);
    let c = z.shape()[1];
    let rows = code_rows(&z);
    let m = unet(model);
    let (yp, chp) = m.d_p.forward(&rows);
    let pitch = bce_term(&yp, &b.pitches, red, 1.0)?;
    if !pitch.mean.is_finite() {
        return Ok((pitch.mean, f64::NAN));
    }
    m.d_p.backward(&chp, &pitch.grad, true);
    step_groups(
        model,
        phase_groups(ModelKind::Unet, Phase::PitchDecoder),
        cfg,
        lr,
        Slot::Primary,
    );
    observer(Phase::PitchDecoder, model);

    // E_cqt is untouched by phase 2, so `z` and its cache are still current.
    let m = unet(model);
    let (ypn, cpn) = m.d_p.forward(&rows);
    let pn = zero_term(&ypn, red, cfg.adversarial_weight as f32);
    if cfg.adversarial_active() {
        if !pn.mean.is_finite() {
            return Ok((pitch.mean, pn.mean));
        }
        m.e_cqt.zero_grad();
        let dz = code_map(&m.d_p.backward(&cpn, &pn.grad, false), c);
        m.e_cqt.backward(&ce, &dz, None, true);
        step_groups(
            model,
            phase_groups(ModelKind::Unet, Phase::Adversarial),
            cfg,
            lr,
            Slot::Alternate,
        );
        observer(Phase::Adversarial, model);
    }
    let unweighted = adversarial_zero_loss(ypn.data()) / ypn.len() as f64;
    Ok((pitch.mean, unweighted))
}

/// One optimizer step with the learning rate from `cfg`.
pub fn train_step(
    model: &mut Model,
    batch: &Batch,
    cfg: &TrainConfig,
) -> Result<LossReport, TrainError> {
    train_step_observed(model, batch, cfg, cfg.learning_rate, &mut |_, _| {})
}

/// One training step at learning rate `lr`; `observer` sees the model at the
/// start and after every phase.
pub fn train_step_observed(
    model: &mut Model,
    batch: &Batch,
    cfg: &TrainConfig,
    lr: f64,
    observer: &mut dyn FnMut(Phase, &Model),
) -> Result<LossReport, TrainError> {
    if model.kind() != cfg.model_kind {
        return Err(TrainError::InvalidConfig(format!(
            "config trains {} but the model is {}",
            cfg.model_kind.name(),
            model.kind().name()
        )));
    }
    let m_inst = batch.instruments.shape()[1];
    if m_inst != model.config().instruments {
        return Err(TrainError::ShapeMismatch(format!(
            "batch has {m_inst} instruments, model {}",
            model.config().instruments
        )));
    }
    observer(Phase::Start, model);
    zero_groups(model);
    let report = match model.kind() {
        ModelKind::Duo => {
            let mut report = duo_joint(duo(model), batch, cfg.reduction)?;
            if !report.is_finite() {
                return Err(non_finite(model, report));
            }
            step_groups(
                model,
                phase_groups(ModelKind::Duo, Phase::Joint),
                cfg,
                lr,
                Slot::Primary,
            );
            observer(Phase::Joint, model);
            if cfg.adversarial_active() {
                zero_groups(model);
                let (tn, pn) = duo_adversarial(
                    duo(model),
                    batch,
                    cfg.reduction,
                    cfg.adversarial_weight as f32,
                );
                report.l_t_n = tn / cfg.adversarial_weight;
                report.l_p_n = pn / cfg.adversarial_weight;
                if !report.is_finite() {
                    return Err(non_finite(model, report));
                }
                step_groups(
                    model,
                    phase_groups(ModelKind::Duo, Phase::Adversarial),
                    cfg,
                    lr,
                    Slot::Alternate,
                );
                observer(Phase::Adversarial, model);
            }
            report
        }
        ModelKind::Unet => {
            let (l_roll, l_t) = unet_joint(unet(model), batch, cfg.reduction)?;
            let mut report = LossReport {
                l_roll,
                l_t,
                ..LossReport::default()
            };
            if !report.is_finite() {
                return Err(non_finite(model, report));
            }
            step_groups(
                model,
                phase_groups(ModelKind::Unet, Phase::Joint),
                cfg,
                lr,
                Slot::Primary,
            );
            observer(Phase::Joint, model);
            zero_groups(model);
            let (l_p, l_p_n) = unet_pitch_phases(model, batch, cfg, lr, observer)?;
            report.l_p = l_p;
            report.l_p_n = l_p_n;
            if !report.is_finite() {
                return Err(non_finite(model, report));
            }
            report
        }
    };
    model.zero_grad();
    model.steps_trained += 1;
    Ok(report)
}

/// All five losses on a batch without updating anything. `mode` selects batch
/// or running statistics for batch normalization.
pub fn evaluate_losses(model: &Model, b: &Batch, mode: Mode) -> Result<LossReport, TrainError> {
    let mean_bce = |y: &Tensor, t: &Tensor| -> Result<f64, TrainError> {
        Ok(bce_loss(y.data(), t.data())? / y.len() as f64)
    };
    let mean_zero = |y: &Tensor| adversarial_zero_loss(y.data()) / y.len() as f64;
    match &model.net {
        Network::Duo(m) => {
            let zt = m.e_t.forward(&b.x, mode).0;
            let zp = m.e_p.forward(&b.x, mode).0;
            let yr = m.d_roll.forward(&concat_channels(&zt, &zp), None, mode).0;
            Ok(LossReport {
                l_roll: mean_bce(&yr, &b.roll)?,
                l_t: mean_bce(&m.d_t.forward(&code_rows(&zt)).0, &b.instruments)?,
                l_p: mean_bce(&m.d_p.forward(&code_rows(&zp)).0, &b.pitches)?,
                l_t_n: mean_zero(&m.d_t.forward(&code_rows(&zp)).0),
                l_p_n: mean_zero(&m.d_p.forward(&code_rows(&zt)).0),
            })
        }
        Network::Unet(m) => {
            let (z, ce) = m.e_cqt.forward(&b.x, mode);
            let yr = m.d_roll.forward(&z, Some(ce.skips()), mode).0;
            let yp = m.d_p.forward(&code_rows(&z)).0;
            Ok(LossReport {
                l_roll: mean_bce(&yr, &b.roll)?,
                l_t: mean_bce(&m.d_t.forward(&code_rows(&z)).0, &b.instruments)?,
                l_p: mean_bce(&yp, &b.pitches)?,
                l_t_n: 0.0,
                l_p_n: mean_zero(&yp),
            })
        }
    }
}

#[cfg(test)]
mod tests;
