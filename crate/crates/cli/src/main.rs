//! `disentangle`: toy data, training, probing, evaluation, transcription and
//! rearrangement from one binary.

mod commands;
mod config;
mod data;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use disentangle::eval::AucPooling;
use disentangle::models::ModelKind;
use serde::Serialize;

use config::{MapName, ModelSize, RunConfig};
use error::CliError;

#[derive(Parser, Debug)]
#[command(
    name = "disentangle",
    version,
    about = "Pitch/timbre disentangling transcription and style transfer"
)]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

/// Overrides applied on top of the config file; flags win.
#[derive(Args, Debug, Serialize)]
struct GlobalArgs {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for every random choice of the run.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Model kind; a loaded checkpoint must match it.
    #[arg(long, global = true, value_enum)]
    model: Option<KindArg>,
    /// Network widths.
    #[arg(long, global = true, value_enum)]
    model_size: Option<ModelSize>,
    /// Instrument slices of the pianoroll.
    #[arg(long, global = true, value_enum)]
    instrument_map: Option<MapName>,
    /// Run the adversarial zero-target phases during training.
    #[arg(long, global = true, value_enum)]
    adversarial: Option<Switch>,
    /// Binarization threshold for rolls, in (0, 1).
    #[arg(long, global = true)]
    threshold: Option<f32>,
    /// How a target's timbre code is fitted to the source length.
    #[arg(long, global = true, value_enum)]
    timbre_time_mode: Option<ModeArg>,
    /// Instrument activity score source.
    #[arg(long, global = true, value_enum)]
    source: Option<SourceArg>,
    /// Pool seconds over the whole test set or average per-clip AUCs.
    #[arg(long, global = true, value_enum)]
    auc_pooling: Option<PoolingArg>,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum KindArg {
    Duo,
    Unet,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum Switch {
    On,
    Off,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum ModeArg {
    Average,
    Tile,
    Crop,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum SourceArg {
    Probe,
    Dt,
    Summed,
}

#[derive(Clone, Copy, Debug, Serialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
enum PoolingArg {
    Seconds,
    Clips,
}

#[derive(Subcommand, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
enum Command {
    /// Generate a synthetic corpus of rendered clips and their rolls.
    SynthData(commands::SynthArgs),
    /// Build aligned (CQT, roll) chunk archives from paired MIDI and audio files.
    Prepare(commands::PrepareArgs),
    /// Train a DuoED or UnetED model.
    Train(commands::TrainArgs),
    /// Fit a probe classifier on a frozen model's latent code.
    TrainProbe(commands::ProbeArgs),
    /// Instrument activity detection report.
    Evaluate(commands::EvaluateArgs),
    /// Audio to multi-instrument MIDI.
    Transcribe(commands::TranscribeArgs),
    /// Pitch content of one clip played with the timbre of another.
    Rearrange(commands::RearrangeArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::SynthData(_) => "synth-data",
            Command::Prepare(_) => "prepare",
            Command::Train(_) => "train",
            Command::TrainProbe(_) => "train-probe",
            Command::Evaluate(_) => "evaluate",
            Command::Transcribe(_) => "transcribe",
            Command::Rearrange(_) => "rearrange",
        }
    }
}

fn resolve(g: &GlobalArgs) -> error::Result<RunConfig> {
    let mut cfg = RunConfig::load(g.config.as_deref())?;
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    if let Some(k) = g.model {
        cfg.model = match k {
            KindArg::Duo => ModelKind::Duo,
            KindArg::Unet => ModelKind::Unet,
        };
    }
    if let Some(s) = g.model_size {
        cfg.model_size = s;
    }
    if let Some(m) = g.instrument_map {
        cfg.instrument_map = m;
    }
    if let Some(a) = g.adversarial {
        cfg.train.adversarial_enabled = matches!(a, Switch::On);
    }
    if let Some(t) = g.threshold {
        if !(t > 0.0 && t < 1.0) {
            return Err(CliError::Usage(format!(
                "--threshold {t} is outside (0, 1)"
            )));
        }
        cfg.threshold = t;
    }
    if let Some(m) = g.timbre_time_mode {
        cfg.timbre_time_mode = format!("{m:?}").to_lowercase().parse().expect("same names");
    }
    if let Some(s) = g.source {
        cfg.source = format!("{s:?}")
            .to_lowercase()
            .parse()
            .expect("accepted names");
    }
    if let Some(p) = g.auc_pooling {
        cfg.auc_pooling = match p {
            PoolingArg::Seconds => AucPooling::Seconds,
            PoolingArg::Clips => AucPooling::Clips,
        };
    }
    Ok(cfg.resolve())
}

fn run(cli: Cli) -> error::Result<()> {
    let cfg = resolve(&cli.global)?;
    // the hash covers the resolved config plus every command-specific argument
    let record =
        serde_json::json!({ "command": cli.command.name(), "args": &cli.command, "config": &cfg });
    let hash = disentangle::digest::config_hash(&record);
    eprintln!(
        "{}",
        serde_json::json!({ "event": "run", "config_hash": hash, "run": record })
    );
    let ctx = commands::Context {
        cfg,
        config_hash: hash,
        explicit_model: cli.global.model.is_some(),
    };
    match &cli.command {
        Command::SynthData(a) => commands::synth_data(&ctx, a),
        Command::Prepare(a) => commands::prepare(&ctx, a),
        Command::Train(a) => commands::train(&ctx, a),
        Command::TrainProbe(a) => commands::train_probe(&ctx, a),
        Command::Evaluate(a) => commands::evaluate(&ctx, a),
        Command::Transcribe(a) => commands::transcribe_cmd(&ctx, a),
        Command::Rearrange(a) => commands::rearrange_cmd(&ctx, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if e.use_stderr() {
                let _ = e.print();
                let line = serde_json::json!({ "error": "usage", "kind": "arguments", "message": e.kind().to_string() });
                eprintln!("{line}");
                return ExitCode::from(2);
            }
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => e.report(),
    }
}
