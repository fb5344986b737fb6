use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use disentangle::eval::{evaluate_iad_pooled, iad_from_scores_pooled, IadResult, ScoreSource};
use disentangle::features::write_wav;
use disentangle::models::{Matrix, Model, ModelKind};
use disentangle::symbolic::{
    events_to_pianoroll, parse_midi, pianoroll_to_midi, write_cqt, write_roll, InstrumentMap,
};
use disentangle::synthgen::{
    generate_toy_dataset, render_pianoroll, write_corpus, Split, TimbreSpec, MANIFEST_FILE,
};
use disentangle::training::{
    self, load_probe, save_probe, CodeSource, ProbeSpec, ProbeTarget, Trainer,
};
use disentangle::transfer::{rearrange, transcribe, TransferRequest};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::data::{self, ChunkEntry, ChunkManifest, ARCHIVE_FORMAT};
use crate::error::{CliError, Result};

pub struct Context {
    pub cfg: RunConfig,
    pub config_hash: String,
    /// `--model` was given, so checkpoints of the other kind are rejected.
    pub explicit_model: bool,
}

fn emit(value: Value) {
    println!("{value}");
}

#[derive(Args, Debug, Serialize)]
pub struct SynthArgs {
    /// Output directory for the corpus.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub clips: Option<usize>,
    #[arg(long)]
    pub clip_seconds: Option<f64>,
}

pub fn synth_data(ctx: &Context, a: &SynthArgs) -> Result<()> {
    let mut cfg = ctx.cfg.clone();
    if let Some(n) = a.clips {
        cfg.synth.clips = n;
    }
    if let Some(s) = a.clip_seconds {
        cfg.synth.clip_seconds = s;
    }
    let dataset = cfg.dataset_config();
    dataset
        .validate()
        .map_err(|e| CliError::Usage(e.to_string()))?;
    let corpus = generate_toy_dataset(&dataset)?;
    let manifest = write_corpus(&corpus, &a.out)?;
    emit(json!({
        "command": "synth-data",
        "config_hash": ctx.config_hash,
        "dataset_hash": manifest.config_hash,
        "clips": manifest.entries.len(),
        "corpus_digest": data::tree_digest(&a.out)?,
    }));
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct PrepareArgs {
    /// Directory of `.mid` files.
    pub midi_dir: PathBuf,
    /// Directory of audio files whose stems match the MIDI files.
    pub audio_dir: PathBuf,
    /// Output directory for the chunk archive.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn prepare(ctx: &Context, a: &PrepareArgs) -> Result<()> {
    let map = ctx.cfg.instrument_map.build();
    let midi = data::files_by_stem(&a.midi_dir, &["mid", "midi"])?;
    let audio = data::files_by_stem(&a.audio_dir, &["wav"])?;
    let mut chunks = Vec::new();
    let mut pairs = 0;
    for (stem, midi_path) in &midi {
        let Some((_, audio_path)) = audio.iter().find(|(s, _)| s == stem) else {
            eprintln!(
                "{}",
                json!({ "event": "skip", "file": midi_path, "reason": "no audio with this stem" })
            );
            continue;
        };
        let cqt = data::cqt_of_audio(&data::read(audio_path)?)?;
        let events = parse_midi(&data::read(midi_path)?, &map)
            .map_err(|e| CliError::Data(format!("{}: {e}", midi_path.display())))?;
        // the half frame keeps the floor in the frame count away from rounding
        let duration = (cqt.frames() as f64 + 0.5) / cqt.frame_rate();
        let roll = events_to_pianoroll(&events, cqt.frame_rate(), duration, &map);
        for (i, (c, r)) in disentangle::symbolic::chunk_pair(&cqt, &roll, ctx.cfg.chunk_frames)?
            .into_iter()
            .enumerate()
        {
            let name = format!("{stem}-{i:04}");
            let entry = ChunkEntry {
                cqt: format!("chunks/{name}.cqt"),
                roll: format!("chunks/{name}.roll"),
                name,
            };
            data::write(&a.out.join(&entry.cqt), &write_cqt(&c))?;
            data::write(&a.out.join(&entry.roll), &write_roll(&r))?;
            chunks.push(entry);
        }
        pairs += 1;
    }
    if pairs == 0 {
        return Err(CliError::Data(
            "no MIDI file has a matching audio file".into(),
        ));
    }
    let manifest = ChunkManifest {
        format: ARCHIVE_FORMAT.into(),
        chunk_frames: ctx.cfg.chunk_frames,
        instrument_map: map,
        chunks,
    };
    let json = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
    data::write(&a.out.join(MANIFEST_FILE), &json)?;
    emit(json!({
        "command": "prepare",
        "config_hash": ctx.config_hash,
        "pairs": pairs,
        "chunks": manifest.chunks.len(),
    }));
    Ok(())
}

/// A model checkpoint with the metadata this binary stores beside the weights.
struct Loaded {
    model: Model,
    map: InstrumentMap,
    extra: Value,
}

fn load_model(ctx: &Context, path: &Path) -> Result<Loaded> {
    let expect = ctx.explicit_model.then_some(ctx.cfg.model);
    let (model, extra) = Model::from_checkpoint(&data::read(path)?, expect)?;
    let map = match serde_json::from_value::<InstrumentMap>(extra["instrument_map"].clone()) {
        Ok(m) => m,
        Err(_) => ctx.cfg.instrument_map.build(),
    };
    if map.num_instruments() != model.config().instruments {
        return Err(CliError::Data(format!(
            "{}: model predicts {} instruments, the instrument map has {}",
            path.display(),
            model.config().instruments,
            map.num_instruments()
        )));
    }
    Ok(Loaded { model, map, extra })
}

#[derive(Args, Debug, Serialize)]
pub struct TrainArgs {
    /// Toy corpus (its train split) or chunk archive.
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    /// Stop after this many optimizer steps.
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Continue from a checkpoint written by this command.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// JSON-lines training log; defaults to stderr.
    #[arg(long)]
    pub log: Option<PathBuf>,
}

pub fn train(ctx: &Context, a: &TrainArgs) -> Result<()> {
    let dataset = data::load_dataset(&a.data, Split::Train)?;
    let chunks = dataset.chunks(ctx.cfg.chunk_frames)?;
    let (mut trainer, mut model) = match &a.resume {
        Some(path) => {
            let loaded = load_model(ctx, path)?;
            let trainer: Trainer = serde_json::from_value(loaded.extra["trainer"].clone())
                .map_err(|e| {
                    CliError::Data(format!("{}: no trainer state: {e}", path.display()))
                })?;
            (trainer, loaded.model)
        }
        None => {
            let mut tc = ctx.cfg.train.clone();
            if let Some(s) = a.steps {
                tc.max_steps = Some(s);
            }
            if let Some(e) = a.epochs {
                tc.epochs = e;
            }
            let mut mc = ctx.cfg.model_config();
            mc.instruments = dataset.instrument_map.num_instruments();
            (Trainer::new(tc)?, Model::new(&mc, ctx.cfg.seed)?)
        }
    };
    if let (Some(_), Some(s)) = (&a.resume, a.steps) {
        trainer.config.max_steps = Some(trainer.global_step + s);
    }
    let mut sink: Box<dyn std::io::Write> = match &a.log {
        Some(p) => Box::new(std::fs::File::create(p).map_err(|e| CliError::io(p, e))?),
        None => Box::new(std::io::stderr()),
    };
    let records = trainer.run(&mut model, &chunks, &mut |r| {
        let _ = writeln!(
            sink,
            "{}",
            serde_json::to_string(r).expect("records serialize")
        );
    })?;
    let extra = json!({
        "trainer": trainer,
        "instrument_map": dataset.instrument_map,
        "config_hash": ctx.config_hash,
    });
    data::write(&a.out, &model.to_checkpoint(extra))?;
    emit(json!({
        "command": "train",
        "config_hash": ctx.config_hash,
        "model": model.kind().name(),
        "steps_trained": model.steps_trained,
        "chunks": chunks.len(),
        "final_losses": records.last().map(|r| r.losses),
    }));
    Ok(())
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum CodeArg {
    Timbre,
    Pitch,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum TargetArg {
    Instrument,
    Pitch,
}

#[derive(Args, Debug, Serialize)]
pub struct ProbeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Toy corpus (its train split) or chunk archive.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value = "timbre")]
    pub code: CodeArg,
    #[arg(long, value_enum, default_value = "instrument")]
    pub target: TargetArg,
    #[arg(long)]
    pub steps: Option<usize>,
}

pub fn train_probe(ctx: &Context, a: &ProbeArgs) -> Result<()> {
    let loaded = load_model(ctx, &a.checkpoint)?;
    let dataset = data::load_dataset(&a.data, Split::Train)?;
    let source = match a.code {
        CodeArg::Timbre => CodeSource::Timbre,
        CodeArg::Pitch => CodeSource::Pitch,
    };
    let target = match a.target {
        TargetArg::Instrument => ProbeTarget::Instrument,
        TargetArg::Pitch => ProbeTarget::Pitch,
    };
    if source == CodeSource::Pitch && loaded.model.kind() != ModelKind::Duo {
        return Err(CliError::Usage("only DuoED has a pitch code".into()));
    }
    let mut pc = ctx.cfg.probe.clone();
    if let Some(s) = a.steps {
        pc.steps = s;
    }
    let spec = ProbeSpec::for_model(&loaded.model, source, target, pc.hidden);
    let mut probe = spec.build(ctx.cfg.seed);
    let losses = training::train_probe(
        &loaded.model,
        &mut probe,
        &dataset.pairs(),
        source,
        target,
        &pc,
    )?;
    data::write(&a.out, &save_probe(&spec, &probe, pc.steps as u64))?;
    emit(json!({
        "command": "train-probe",
        "config_hash": ctx.config_hash,
        "steps": pc.steps,
        "final_loss": losses.last(),
    }));
    Ok(())
}

/// Per-clip `(instruments, seconds)` scores and labels, for checking the metric
/// without a model.
#[derive(Debug, Deserialize)]
pub struct ScoreFixture {
    pub instruments: Vec<String>,
    pub clips: Vec<FixtureClip>,
}

#[derive(Debug, Deserialize)]
pub struct FixtureClip {
    pub scores: Vec<Vec<f32>>,
    pub labels: Vec<Vec<f32>>,
}

fn matrix(rows: &[Vec<f32>]) -> Result<Matrix> {
    let cols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != cols) {
        return Err(CliError::Data("ragged score matrix".into()));
    }
    Ok(Matrix {
        rows: rows.len(),
        cols,
        data: rows.concat(),
    })
}

#[derive(Args, Debug, Serialize)]
pub struct EvaluateArgs {
    #[arg(long, required_unless_present = "scores")]
    pub checkpoint: Option<PathBuf>,
    /// Toy corpus (its test split) or chunk archive.
    #[arg(long, required_unless_present = "scores")]
    pub data: Option<PathBuf>,
    /// Probe checkpoint, needed for `--source probe`.
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Precomputed scores and labels (JSON) instead of a model.
    #[arg(long, conflicts_with_all = ["checkpoint", "data", "probe"])]
    pub scores: Option<PathBuf>,
    /// JSON-lines report; defaults to stdout after the table.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn evaluate(ctx: &Context, a: &EvaluateArgs) -> Result<()> {
    let result: IadResult = if let Some(path) = &a.scores {
        let fixture: ScoreFixture = serde_json::from_slice(&data::read(path)?)
            .map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let scores = fixture
            .clips
            .iter()
            .map(|c| matrix(&c.scores))
            .collect::<Result<Vec<_>>>()?;
        let labels = fixture
            .clips
            .iter()
            .map(|c| matrix(&c.labels))
            .collect::<Result<Vec<_>>>()?;
        iad_from_scores_pooled(
            ctx.cfg.source,
            &fixture.instruments,
            &scores,
            &labels,
            ctx.cfg.auc_pooling,
        )?
    } else {
        let (ckpt, dir) = (
            a.checkpoint.as_ref().expect("clap"),
            a.data.as_ref().expect("clap"),
        );
        let loaded = load_model(ctx, ckpt)?;
        let dataset = data::load_dataset(dir, Split::Test)?;
        let probe = match (&a.probe, ctx.cfg.source) {
            (Some(p), _) => Some(load_probe(&data::read(p)?)?),
            (None, ScoreSource::Probe) => {
                return Err(CliError::Usage("--source probe needs --probe".into()))
            }
            (None, _) => None,
        };
        if let Some((spec, _)) = &probe {
            if spec.source != CodeSource::Timbre || spec.target != ProbeTarget::Instrument {
                return Err(CliError::Usage(
                    "instrument activity needs a timbre-code instrument probe".into(),
                ));
            }
        }
        evaluate_iad_pooled(
            &loaded.model,
            probe.as_ref().map(|p| &p.1),
            &dataset.pairs(),
            ctx.cfg.source,
            ctx.cfg.auc_pooling,
        )?
    };
    print!("{}", result.table());
    let lines = result.json_lines();
    match &a.out {
        Some(p) => data::write(p, lines.as_bytes())?,
        None => print!("{lines}"),
    }
    emit(json!({
        "command": "evaluate",
        "config_hash": ctx.config_hash,
        "source": result.source.name(),
        "average_auc": result.average,
    }));
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct TranscribeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Input audio (WAV).
    pub audio: PathBuf,
    /// Output MIDI file.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn transcribe_cmd(ctx: &Context, a: &TranscribeArgs) -> Result<()> {
    let loaded = load_model(ctx, &a.checkpoint)?;
    let clip = data::load_clip(&a.audio)?;
    let roll = transcribe(&loaded.model, &clip, ctx.cfg.threshold, &loaded.map)?;
    data::write(&a.out, &pianoroll_to_midi(&roll, &loaded.map))?;
    emit(json!({
        "command": "transcribe",
        "config_hash": ctx.config_hash,
        "frames": roll.frames(),
        "active_cells": roll.active_cells(),
    }));
    Ok(())
}

#[derive(Args, Debug, Serialize)]
pub struct RearrangeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Clip A: pitch content and timeline.
    pub source_audio: PathBuf,
    /// Clip B: timbre.
    pub target_audio: PathBuf,
    /// Output MIDI file.
    #[arg(long)]
    pub out: PathBuf,
    /// Also render the result to a WAV file.
    #[arg(long)]
    pub wav: Option<PathBuf>,
}

/// One synthetic timbre per instrument: the built-in one of the same name, else
/// the built-in set in turn.
fn timbres_for(map: &InstrumentMap) -> Vec<TimbreSpec> {
    let builtin = TimbreSpec::toy_set();
    (0..map.num_instruments())
        .map(|i| {
            builtin
                .iter()
                .find(|t| t.name == map.name(i))
                .unwrap_or(&builtin[i % builtin.len()])
                .clone()
        })
        .collect()
}

pub fn rearrange_cmd(ctx: &Context, a: &RearrangeArgs) -> Result<()> {
    let loaded = load_model(ctx, &a.checkpoint)?;
    let source = data::load_clip(&a.source_audio)?;
    let target = data::load_clip(&a.target_audio)?;
    let req = TransferRequest {
        threshold: ctx.cfg.threshold,
        timbre_time_mode: ctx.cfg.timbre_time_mode,
        ..TransferRequest::new(&source, &target, &loaded.model, &loaded.map)
    };
    let out = rearrange(&req)?;
    data::write(&a.out, &pianoroll_to_midi(&out.roll, &loaded.map))?;
    if let Some(path) = &a.wav {
        let audio = render_pianoroll(&out.roll, &timbres_for(&loaded.map), source.sample_rate)?;
        data::write(path, &write_wav(&audio))?;
    }
    emit(json!({
        "command": "rearrange",
        "config_hash": ctx.config_hash,
        "frames": out.roll.frames(),
        "active_cells": out.roll.active_cells(),
    }));
    Ok(())
}
