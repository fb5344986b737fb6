use std::process::ExitCode;

use disentangle::eval::EvalError;
use disentangle::features::FeatureError;
use disentangle::models::ModelError;
use disentangle::symbolic::SymbolicError;
use disentangle::synthgen::SynthError;
use disentangle::training::TrainError;
use disentangle::transfer::TransferError;
use thiserror::Error;

/// Coarse error class; each maps to a stable exit code.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Class {
    Usage,
    Data,
    Model,
}

impl Class {
    pub fn code(self) -> u8 {
        match self {
            Class::Usage => 2,
            Class::Data => 3,
            Class::Model => 4,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Class::Usage => "usage",
            Class::Data => "data",
            Class::Model => "model",
        }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{0}")]
    Data(String),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Transfer(#[from] TransferError),
}

impl CliError {
    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.display().to_string(),
            source,
        }
    }

    pub fn class(&self) -> Class {
        match self {
            CliError::Usage(_) => Class::Usage,
            CliError::Io { .. }
            | CliError::Data(_)
            | CliError::Feature(_)
            | CliError::Symbolic(_)
            | CliError::Synth(_) => Class::Data,
            CliError::Train(
                TrainError::ShapeMismatch(_)
                | TrainError::NonBinaryTarget(_)
                | TrainError::EmptyDataset,
            ) => Class::Data,
            CliError::Train(TrainError::InvalidConfig(_)) => Class::Usage,
            CliError::Eval(EvalError::EmptyTestset | EvalError::ShapeMismatch(_)) => Class::Data,
            CliError::Eval(EvalError::MissingProbe) => Class::Usage,
            CliError::Transfer(
                TransferError::ClipTooShort { .. }
                | TransferError::LengthMismatch(_)
                | TransferError::Feature(_),
            ) => Class::Data,
            CliError::Transfer(TransferError::InvalidRequest(_)) => Class::Usage,
            CliError::Model(_) | CliError::Train(_) | CliError::Eval(_) | CliError::Transfer(_) => {
                Class::Model
            }
        }
    }

    /// Short variant name for the machine-readable error line.
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Io { .. } => "io",
            CliError::Data(_) => "invalid_data",
            CliError::Feature(_) => "feature",
            CliError::Symbolic(_) => "symbolic",
            CliError::Synth(_) => "synth",
            CliError::Model(_) => "model",
            CliError::Train(TrainError::NonFiniteLoss { .. }) => "non_finite_loss",
            CliError::Train(_) => "train",
            CliError::Eval(_) => "eval",
            CliError::Transfer(TransferError::UntrainedModel) => "untrained_model",
            CliError::Transfer(TransferError::DegenerateOutput { .. }) => "degenerate_output",
            CliError::Transfer(TransferError::ClipTooShort { .. }) => "clip_too_short",
            CliError::Transfer(_) => "transfer",
        }
    }

    /// Print the one-line JSON error record to stderr and return the exit code.
    pub fn report(&self) -> ExitCode {
        let class = self.class();
        let line = serde_json::json!({
            "error": class.name(),
            "kind": self.kind(),
            "message": self.to_string(),
        });
        eprintln!("{line}");
        ExitCode::from(class.code())
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
