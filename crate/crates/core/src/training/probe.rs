use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bce_grad, bce_loss, sgd_step, Slot, TrainError};
use crate::eval::{pool_to_seconds, Pool};
use crate::features::CqtMatrix;
use crate::models::{code_rows, Matrix, Model, Probe};
use crate::nn::{Module, Tensor};
use crate::symbolic::{project_instrument_roll, project_pitch_roll, Pianoroll, PITCH_BINS};
use crate::timebase::seconds_for;

/// Which frozen code the probe reads.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CodeSource {
    Timbre,
    /// DuoED only.
    Pitch,
}

/// What the probe predicts per second.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProbeTarget {
    Instrument,
    Pitch,
}

impl ProbeTarget {
    pub fn outputs(self, instruments: usize) -> usize {
        match self {
            ProbeTarget::Instrument => instruments,
            ProbeTarget::Pitch => PITCH_BINS,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeTrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub steps: usize,
    pub hidden: usize,
    pub seed: u64,
    /// L2 penalty coefficient added to every gradient.
    pub weight_decay: f64,
}

impl Default for ProbeTrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            momentum: 0.9,
            batch_size: 16,
            steps: 300,
            hidden: 64,
            seed: 0,
            weight_decay: 0.0,
        }
    }
}

/// A cached frozen code with its per-second labels.
#[derive(Clone, Debug)]
pub struct ProbeExample {
    /// `(1, κ, 1, τ)`.
    pub code: Tensor,
    pub column_rate: f64,
    /// `(outputs, seconds)`, max-pooled binary labels.
    pub labels: Matrix,
}

/// Compute (once) the frozen codes and per-second labels of `clips`.
pub fn probe_examples(
    frozen: &Model,
    clips: &[(&CqtMatrix, &Pianoroll)],
    source: CodeSource,
    target: ProbeTarget,
) -> Result<Vec<ProbeExample>, TrainError> {
    clips
        .iter()
        .map(|(cqt, roll)| {
            let code = match source {
                CodeSource::Timbre => frozen.timbre_code(cqt)?,
                CodeSource::Pitch => frozen.pitch_code(cqt)?.ok_or_else(|| {
                    TrainError::InvalidConfig("only DuoED has a pitch code".into())
                })?,
            };
            let (rows, frames) = match target {
                ProbeTarget::Instrument => {
                    let r = project_instrument_roll(roll);
                    (r.instruments, r.data)
                }
                ProbeTarget::Pitch => (PITCH_BINS, project_pitch_roll(roll).data),
            };
            let values: Vec<f32> = frames.iter().map(|&v| v as f32).collect();
            let labels =
                pool_to_seconds(&values, rows, roll.frames(), roll.frame_rate(), Pool::Max);
            Ok(ProbeExample {
                code: code_rows(&code.feature_map()),
                column_rate: Model::column_rate(cqt.frame_rate()),
                labels,
            })
        })
        .collect()
}

/// Probe logits `(outputs, seconds)` for one cached example.
pub fn probe_logits(probe: &Probe, ex: &ProbeExample) -> Result<Matrix, TrainError> {
    let (y, _) = probe.forward(&ex.code, ex.column_rate, ex.labels.cols)?;
    Ok(Matrix {
        rows: ex.labels.rows,
        cols: ex.labels.cols,
        data: y.into_data(),
    })
}

fn stack_batch(items: &[&ProbeExample]) -> Result<(Tensor, Tensor), TrainError> {
    let first = items[0];
    if items
        .iter()
        .any(|e| e.code.shape() != first.code.shape() || e.labels.cols != first.labels.cols)
    {
        return Err(TrainError::ShapeMismatch(
            "probe batch items differ in length".into(),
        ));
    }
    let (_, k, _, tau) = first.code.dims4();
    let (rows, cols) = (first.labels.rows, first.labels.cols);
    let codes = items
        .iter()
        .flat_map(|e| e.code.data().iter().copied())
        .collect();
    let labels = items
        .iter()
        .flat_map(|e| e.labels.data.iter().copied())
        .collect();
    Ok((
        Tensor::from_vec(&[items.len(), k, 1, tau], codes),
        Tensor::from_vec(&[items.len(), rows, 1, cols], labels),
    ))
}

/// Train `probe` on cached frozen codes; returns the per-step mean batch loss.
/// The frozen model is only read (codes are computed up front), never updated.
pub fn train_probe(
    frozen: &Model,
    probe: &mut Probe,
    clips: &[(&CqtMatrix, &Pianoroll)],
    source: CodeSource,
    target: ProbeTarget,
    cfg: &ProbeTrainConfig,
) -> Result<Vec<f64>, TrainError> {
    let examples = probe_examples(frozen, clips, source, target)?;
    train_probe_on(probe, &examples, cfg)
}

/// [`train_probe`] on precomputed examples. The probe's input standardization is
/// fitted to the examples first; batches are drawn from a seeded shuffle that is
/// redrawn after each pass.
pub fn train_probe_on(
    probe: &mut Probe,
    examples: &[ProbeExample],
    cfg: &ProbeTrainConfig,
) -> Result<Vec<f64>, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::InvalidConfig(
            "batch_size must be positive".into(),
        ));
    }
    probe.fit_standardization(&examples.iter().map(|e| &e.code).collect::<Vec<_>>());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut pos = order.len();
    let mut losses = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        if pos + cfg.batch_size.min(order.len()) > order.len() {
            order.shuffle(&mut rng);
            pos = 0;
        }
        let take = cfg.batch_size.min(order.len());
        let items: Vec<&ProbeExample> = order[pos..pos + take]
            .iter()
            .map(|&i| &examples[i])
            .collect();
        pos += take;
        let (codes, labels) = stack_batch(&items)?;
        let (y, cache) = probe.forward(&codes, items[0].column_rate, labels.shape()[3])?;
        let loss = bce_loss(y.data(), labels.data())? / y.len() as f64;
        if !loss.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                step: step as u64,
                report: super::LossReport {
                    l_t: loss,
                    ..Default::default()
                },
            });
        }
        let mut g = Tensor::from_vec(y.shape(), bce_grad(y.data(), labels.data())?);
        g.scale(1.0 / y.len() as f32);
        probe.zero_grad();
        probe.backward(&cache, &g);
        if cfg.weight_decay > 0.0 {
            let wd = cfg.weight_decay as f32;
            probe.visit_params_mut("", &mut |_, p| {
                for (gi, &pi) in p.grad.data_mut().iter_mut().zip(p.value.data()) {
                    *gi += wd * pi;
                }
            });
        }
        sgd_step(
            probe,
            cfg.learning_rate as f32,
            cfg.momentum as f32,
            Slot::Primary,
        );
        losses.push(loss);
    }
    Ok(losses)
}

/// Number of seconds a clip of `frames` frames contributes.
pub fn clip_seconds(frames: usize, frame_rate: f64) -> usize {
    seconds_for(frames, frame_rate)
}

/// Shape and purpose of a probe, stored in its checkpoint header.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeSpec {
    pub input_rows: usize,
    pub hidden: usize,
    pub outputs: usize,
    pub slope: f32,
    pub source: CodeSource,
    pub target: ProbeTarget,
}

impl ProbeSpec {
    pub fn for_model(
        frozen: &Model,
        source: CodeSource,
        target: ProbeTarget,
        hidden: usize,
    ) -> Self {
        let cfg = frozen.config();
        Self {
            input_rows: cfg.encoder.kappa(),
            hidden,
            outputs: target.outputs(cfg.instruments),
            slope: cfg.encoder.slope,
            source,
            target,
        }
    }

    pub fn build(&self, seed: u64) -> Probe {
        Probe::new(
            &mut ChaCha8Rng::seed_from_u64(seed),
            self.input_rows,
            self.hidden,
            self.outputs,
            self.slope,
        )
    }
}

pub fn save_probe(spec: &ProbeSpec, probe: &Probe, steps: u64) -> Vec<u8> {
    let config = serde_json::to_value(spec).expect("spec serializes");
    crate::models::write_checkpoint("probe", config, steps, serde_json::Value::Null, probe)
}

pub fn load_probe(bytes: &[u8]) -> Result<(ProbeSpec, Probe), TrainError> {
    use crate::models::ModelError;
    let raw = crate::models::read_checkpoint(bytes)?;
    if raw.header.kind != "probe" {
        return Err(ModelError::VersionMismatch(format!(
            "checkpoint holds a {} model, expected a probe",
            raw.header.kind
        ))
        .into());
    }
    let spec: ProbeSpec = serde_json::from_value(raw.header.config.clone())
        .map_err(|e| ModelError::CorruptCheckpoint(format!("bad probe spec: {e}")))?;
    let mut probe = spec.build(0);
    raw.restore_into(&mut probe)?;
    Ok((spec, probe))
}
