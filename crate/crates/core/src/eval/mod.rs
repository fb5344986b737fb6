//! Per-second instrument activity detection (IAD) metrics and the pitch
//! disentanglement diagnostic.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::features::CqtMatrix;
use crate::models::{code_rows, sigmoid, Matrix, Model, ModelError, Network, Probe};
use crate::symbolic::{project_instrument_roll, Pianoroll, PITCH_BINS};
use crate::timebase::{second_buckets, seconds_for};
use crate::training::{
    probe_examples, probe_logits, train_probe_on, CodeSource, ProbeSpec, ProbeTarget,
    ProbeTrainConfig, TrainError,
};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("the test set is empty")]
    EmptyTestset,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("source `probe` needs a trained probe")]
    MissingProbe,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pool {
    Max,
    Mean,
}

/// Aggregate each row of a row-major `(rows, frames)` matrix into seconds by frame
/// center time (see [`second_buckets`]).
pub fn pool_to_seconds(
    values: &[f32],
    rows: usize,
    frames: usize,
    frame_rate: f64,
    pool: Pool,
) -> Matrix {
    assert_eq!(
        values.len(),
        rows * frames,
        "values do not form a ({rows}, {frames}) matrix"
    );
    let buckets = second_buckets(frames, frame_rate);
    let cols = buckets.len();
    let mut data = Vec::with_capacity(rows * cols);
    for r in 0..rows {
        let row = &values[r * frames..(r + 1) * frames];
        for b in &buckets {
            let cells = &row[b.clone()];
            data.push(match pool {
                Pool::Max => cells.iter().copied().fold(f32::NEG_INFINITY, f32::max),
                Pool::Mean => {
                    (cells.iter().map(|&v| v as f64).sum::<f64>() / cells.len() as f64) as f32
                }
            });
        }
    }
    Matrix { rows, cols, data }
}

/// Area under the ROC curve by the rank-sum statistic with midranks for ties.
/// `None` when the labels hold only one class (the AUC is undefined).
///
/// Ranks are kept doubled so every intermediate value is an integer; the result is
/// a single division `(2U) / (2·P·N)`.
pub fn auc(scores: &[f32], labels: &[bool]) -> Option<f64> {
    assert_eq!(scores.len(), labels.len());
    let pos = labels.iter().filter(|&&l| l).count() as u64;
    let neg = labels.len() as u64 - pos;
    if pos == 0 || neg == 0 {
        return None;
    }
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum2: u64 = 0;
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && scores[idx[j + 1]] == scores[idx[i]] {
            j += 1;
        }
        // ranks i+1..=j+1, doubled midrank = i + j + 2
        let mid2 = (i + j + 2) as u64;
        rank_sum2 += mid2 * idx[i..=j].iter().filter(|&&k| labels[k]).count() as u64;
        i = j + 1;
    }
    let u2 = rank_sum2 - pos * (pos + 1);
    Some(u2 as f64 / (2 * pos * neg) as f64)
}

/// Mean of the defined entries; `None` if none is defined.
pub fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let d: Vec<f64> = values.iter().flatten().copied().collect();
    (!d.is_empty()).then(|| d.iter().sum::<f64>() / d.len() as f64)
}

/// Where IAD scores come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreSource {
    Probe,
    DecoderDt,
    SummedRoll,
}

impl ScoreSource {
    pub fn name(self) -> &'static str {
        match self {
            ScoreSource::Probe => "probe",
            ScoreSource::DecoderDt => "decoder_dt",
            ScoreSource::SummedRoll => "summed_roll",
        }
    }
}

impl std::str::FromStr for ScoreSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "probe" => Ok(ScoreSource::Probe),
            "dt" | "decoder_dt" => Ok(ScoreSource::DecoderDt),
            "summed" | "summed_roll" => Ok(ScoreSource::SummedRoll),
            other => Err(format!("unknown score source `{other}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstrumentAuc {
    pub instrument: String,
    /// `None` when the test set has only one class for this instrument.
    pub auc: Option<f64>,
    pub positives: usize,
    pub seconds: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IadResult {
    pub source: ScoreSource,
    pub per_instrument: Vec<InstrumentAuc>,
    /// Mean over instruments with a defined AUC.
    pub average: Option<f64>,
}

impl IadResult {
    pub fn table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<20} {:>8} {:>9} {:>8}",
            "instrument", "AUC", "positive", "seconds"
        );
        for r in &self.per_instrument {
            let auc = r.auc.map_or("UNDEFINED".to_string(), |a| format!("{a:.4}"));
            let _ = writeln!(
                s,
                "{:<20} {:>8} {:>9} {:>8}",
                r.instrument, auc, r.positives, r.seconds
            );
        }
        let avg = self
            .average
            .map_or("UNDEFINED".to_string(), |a| format!("{a:.4}"));
        let _ = writeln!(
            s,
            "{:<20} {:>8}   (source: {})",
            "average",
            avg,
            self.source.name()
        );
        s
    }

    pub fn json_lines(&self) -> String {
        let mut s = String::new();
        for r in &self.per_instrument {
            let _ = writeln!(s, "{}", serde_json::to_string(r).expect("serializable"));
        }
        let _ = writeln!(
            s,
            "{}",
            serde_json::json!({ "instrument": "average", "auc": self.average, "source": self.source.name() })
        );
        s
    }
}

/// How seconds from different clips are combined into one AUC per instrument.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AucPooling {
    /// One AUC over the concatenated seconds of all clips.
    #[default]
    Seconds,
    /// AUC within each clip, averaged over the clips where it is defined.
    Clips,
}

/// AUC per row over the concatenation of all seconds of all clips. `scores[i]` and
/// `labels[i]` are `(instruments, seconds_i)` matrices of one clip.
pub fn iad_from_scores(
    source: ScoreSource,
    names: &[String],
    scores: &[Matrix],
    labels: &[Matrix],
) -> Result<IadResult, EvalError> {
    iad_from_scores_pooled(source, names, scores, labels, AucPooling::Seconds)
}

pub fn iad_from_scores_pooled(
    source: ScoreSource,
    names: &[String],
    scores: &[Matrix],
    labels: &[Matrix],
    pooling: AucPooling,
) -> Result<IadResult, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyTestset);
    }
    if scores.len() != labels.len() {
        return Err(EvalError::ShapeMismatch(format!(
            "{} score clips, {} label clips",
            scores.len(),
            labels.len()
        )));
    }
    for (s, l) in scores.iter().zip(labels) {
        if s.rows != names.len() || l.rows != names.len() || s.cols != l.cols {
            return Err(EvalError::ShapeMismatch(format!(
                "scores ({}, {}) vs labels ({}, {}) for {} instruments",
                s.rows,
                s.cols,
                l.rows,
                l.cols,
                names.len()
            )));
        }
    }
    let per_instrument: Vec<InstrumentAuc> = names
        .iter()
        .enumerate()
        .map(|(m, name)| {
            let mut sc = Vec::new();
            let mut lb = Vec::new();
            let mut per_clip = Vec::new();
            for (s, l) in scores.iter().zip(labels) {
                let (cs, cl) = (
                    &s.data[m * s.cols..(m + 1) * s.cols],
                    &l.data[m * l.cols..(m + 1) * l.cols],
                );
                let cl: Vec<bool> = cl.iter().map(|&v| v > 0.5).collect();
                if pooling == AucPooling::Clips {
                    per_clip.push(auc(cs, &cl));
                }
                sc.extend_from_slice(cs);
                lb.extend(cl);
            }
            let value = match pooling {
                AucPooling::Seconds => auc(&sc, &lb),
                AucPooling::Clips => mean_defined(&per_clip),
            };
            InstrumentAuc {
                instrument: name.clone(),
                auc: value,
                positives: lb.iter().filter(|&&b| b).count(),
                seconds: lb.len(),
            }
        })
        .collect();
    let average = mean_defined(&per_instrument.iter().map(|r| r.auc).collect::<Vec<_>>());
    Ok(IadResult {
        source,
        per_instrument,
        average,
    })
}

/// Ground-truth per-second instrument labels (max-pooled).
pub fn instrument_labels(roll: &Pianoroll) -> Matrix {
    let ir = project_instrument_roll(roll);
    let values: Vec<f32> = ir.data.iter().map(|&v| v as f32).collect();
    pool_to_seconds(&values, ir.instruments, ir.frames, ir.frame_rate, Pool::Max)
}

/// Per-second instrument scores `(M, seconds)` for one clip: σ of the chosen output,
/// mean-pooled over each second.
pub fn clip_scores(
    model: &Model,
    probe: Option<&Probe>,
    cqt: &CqtMatrix,
    source: ScoreSource,
) -> Result<Matrix, EvalError> {
    let frames = cqt.frames();
    let m = model.config().instruments;
    let frame_scores =
        |values: Vec<f32>| pool_to_seconds(&values, m, frames, cqt.frame_rate(), Pool::Mean);
    match source {
        ScoreSource::Probe => {
            let probe = probe.ok_or(EvalError::MissingProbe)?;
            if probe.outputs() != m {
                return Err(EvalError::ShapeMismatch(format!(
                    "probe predicts {} classes, model has {m} instruments",
                    probe.outputs()
                )));
            }
            let z = model.timbre_code(cqt)?;
            let seconds = seconds_for(frames, cqt.frame_rate());
            let (y, _) = probe.forward(
                &code_rows(&z.feature_map()),
                Model::column_rate(cqt.frame_rate()),
                seconds,
            )?;
            Ok(Matrix {
                rows: m,
                cols: seconds,
                data: y.data().iter().map(|&v| sigmoid(v)).collect(),
            })
        }
        ScoreSource::DecoderDt => {
            let p = model.predict(cqt)?;
            Ok(frame_scores(
                p.timbre.data.iter().map(|&v| sigmoid(v)).collect(),
            ))
        }
        ScoreSource::SummedRoll => {
            let p = model.predict(cqt)?;
            let probs = p.roll.probabilities();
            let mut inst = vec![0f32; m * frames];
            for mi in 0..m {
                for f in 0..PITCH_BINS {
                    let row =
                        &probs[(mi * PITCH_BINS + f) * frames..(mi * PITCH_BINS + f + 1) * frames];
                    for (o, &v) in inst[mi * frames..(mi + 1) * frames].iter_mut().zip(row) {
                        *o = o.max(v);
                    }
                }
            }
            Ok(frame_scores(inst))
        }
    }
}

/// IAD over a test set of `(CQT, ground-truth roll)` clips.
pub fn evaluate_iad(
    model: &Model,
    probe: Option<&Probe>,
    testset: &[(&CqtMatrix, &Pianoroll)],
    source: ScoreSource,
) -> Result<IadResult, EvalError> {
    evaluate_iad_pooled(model, probe, testset, source, AucPooling::Seconds)
}

pub fn evaluate_iad_pooled(
    model: &Model,
    probe: Option<&Probe>,
    testset: &[(&CqtMatrix, &Pianoroll)],
    source: ScoreSource,
    pooling: AucPooling,
) -> Result<IadResult, EvalError> {
    if testset.is_empty() {
        return Err(EvalError::EmptyTestset);
    }
    let mut scores = Vec::with_capacity(testset.len());
    let mut labels = Vec::with_capacity(testset.len());
    for (cqt, roll) in testset {
        scores.push(clip_scores(model, probe, cqt, source)?);
        labels.push(instrument_labels(roll));
    }
    let names = model_instrument_names(testset[0].1, model.config().instruments);
    iad_from_scores_pooled(source, &names, &scores, &labels, pooling)
}

fn model_instrument_names(roll: &Pianoroll, m: usize) -> Vec<String> {
    let names = roll.instrument_map().names();
    if names.len() == m {
        names.to_vec()
    } else {
        (0..m).map(|i| format!("instrument {i}")).collect()
    }
}

/// Held-out AUC of a fresh probe trained on a frozen code, averaged over classes.
pub fn probe_auc(
    frozen: &Model,
    source: CodeSource,
    target: ProbeTarget,
    train: &[(&CqtMatrix, &Pianoroll)],
    test: &[(&CqtMatrix, &Pianoroll)],
    cfg: &ProbeTrainConfig,
) -> Result<Option<f64>, EvalError> {
    if test.is_empty() {
        return Err(EvalError::EmptyTestset);
    }
    let spec = ProbeSpec::for_model(frozen, source, target, cfg.hidden);
    let mut probe = spec.build(cfg.seed);
    let train_ex = probe_examples(frozen, train, source, target)?;
    train_probe_on(&mut probe, &train_ex, cfg)?;
    let test_ex = probe_examples(frozen, test, source, target)?;
    let scores: Vec<Matrix> = test_ex
        .iter()
        .map(|e| probe_logits(&probe, e))
        .collect::<Result<_, _>>()?;
    let labels: Vec<Matrix> = test_ex.into_iter().map(|e| e.labels).collect();
    let names: Vec<String> = (0..spec.outputs).map(|i| i.to_string()).collect();
    Ok(iad_from_scores(ScoreSource::Probe, &names, &scores, &labels)?.average)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisentanglementReport {
    /// Held-out pitch AUC of a probe on the first model's `Z_t`.
    pub pitch_auc_a: Option<f64>,
    pub pitch_auc_b: Option<f64>,
    /// `a − b`; positive when model b holds less pitch information.
    pub gap: Option<f64>,
}

/// Train identical fresh pitch probes on the frozen timbre codes of two models
/// (typically non-adversarial `a` and adversarial `b`).
pub fn disentanglement_report(
    a: &Model,
    b: &Model,
    train: &[(&CqtMatrix, &Pianoroll)],
    test: &[(&CqtMatrix, &Pianoroll)],
    cfg: &ProbeTrainConfig,
) -> Result<DisentanglementReport, EvalError> {
    let pa = probe_auc(a, CodeSource::Timbre, ProbeTarget::Pitch, train, test, cfg)?;
    let pb = probe_auc(b, CodeSource::Timbre, ProbeTarget::Pitch, train, test, cfg)?;
    Ok(DisentanglementReport {
        pitch_auc_a: pa,
        pitch_auc_b: pb,
        gap: pa.zip(pb).map(|(x, y)| x - y),
    })
}

/// Mean eval-mode `σ(D_p(Z_t))` over clips — how much pitch the adversarial
/// decoder still reads from the timbre code.
pub fn mean_adversarial_pitch_activation(
    model: &Model,
    clips: &[&CqtMatrix],
) -> Result<f64, EvalError> {
    if clips.is_empty() {
        return Err(EvalError::EmptyTestset);
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for cqt in clips {
        let z = model.timbre_code(cqt)?;
        let y = match &model.net {
            Network::Duo(m) => m.decode_pitch(&z)?,
            Network::Unet(m) => m.decode_pitch(&z)?,
        };
        sum += y.data.iter().map(|&v| sigmoid(v) as f64).sum::<f64>();
        count += y.data.len();
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests;
