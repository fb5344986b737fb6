use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::{train_step_observed, Batch, LossReport, Phase, TrainConfig, TrainError};
use crate::features::CqtMatrix;
use crate::models::{Model, ModelError};
use crate::symbolic::Pianoroll;

/// One line of the JSON-lines training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub epoch: usize,
    pub learning_rate: f64,
    #[serde(flatten)]
    pub losses: LossReport,
    pub wall_time_s: f64,
}

/// Epoch/batch bookkeeping around [`train_step_observed`]. The batch order of
/// epoch `e` is a pure function of `(seed, e)`, so a resumed run sees the same
/// batches as an uninterrupted one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trainer {
    pub config: TrainConfig,
    pub epoch: usize,
    /// Next batch within the current epoch.
    pub batch_index: usize,
    pub global_step: u64,
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        Ok(Self {
            config,
            epoch: 0,
            batch_index: 0,
            global_step: 0,
        })
    }

    /// Full batches per epoch (a short remainder is dropped; at least one batch).
    pub fn batches_per_epoch(&self, n: usize) -> usize {
        (n / self.config.batch_size).max(1)
    }

    pub fn epoch_order(&self, n: usize, epoch: usize) -> Vec<usize> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        order
    }

    pub fn learning_rate(&self) -> f64 {
        self.config.learning_rate * self.config.lr_decay.powi(self.epoch as i32)
    }

    pub fn finished(&self) -> bool {
        self.epoch >= self.config.epochs
            || self.config.max_steps.is_some_and(|m| self.global_step >= m)
    }

    /// Indices of the next batch (without advancing).
    pub fn next_batch(&self, n: usize) -> Vec<usize> {
        let size = self.config.batch_size.min(n);
        let order = self.epoch_order(n, self.epoch);
        order[self.batch_index * size..(self.batch_index + 1) * size].to_vec()
    }

    /// One optimizer step on the next batch, advancing the counters.
    pub fn step(
        &mut self,
        model: &mut Model,
        data: &[(CqtMatrix, Pianoroll)],
        observer: &mut dyn FnMut(Phase, &Model),
    ) -> Result<LogRecord, TrainError> {
        if data.is_empty() {
            return Err(TrainError::EmptyDataset);
        }
        let started = Instant::now();
        let idx = self.next_batch(data.len());
        let pairs: Vec<(&CqtMatrix, &Pianoroll)> =
            idx.iter().map(|&i| (&data[i].0, &data[i].1)).collect();
        let batch = Batch::new(&pairs)?;
        let lr = self.learning_rate();
        let losses = train_step_observed(model, &batch, &self.config, lr, observer)?;
        let record = LogRecord {
            step: self.global_step,
            epoch: self.epoch,
            learning_rate: lr,
            losses,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        self.global_step += 1;
        self.batch_index += 1;
        if self.batch_index >= self.batches_per_epoch(data.len()) {
            self.batch_index = 0;
            self.epoch += 1;
        }
        Ok(record)
    }

    /// Train until the epoch or step budget is exhausted; `log` sees every record.
    pub fn run(
        &mut self,
        model: &mut Model,
        data: &[(CqtMatrix, Pianoroll)],
        log: &mut dyn FnMut(&LogRecord),
    ) -> Result<Vec<LogRecord>, TrainError> {
        let mut out = Vec::new();
        while !self.finished() {
            let r = self.step(model, data, &mut |_, _| {})?;
            log(&r);
            out.push(r);
        }
        Ok(out)
    }

    /// Checkpoint bytes holding the model, both momentum buffers and this trainer.
    pub fn save(&self, model: &Model) -> Vec<u8> {
        model.to_checkpoint(json!({ "trainer": self }))
    }

    /// Restore a model and its trainer state from [`Trainer::save`] output.
    pub fn resume(bytes: &[u8]) -> Result<(Trainer, Model), TrainError> {
        let (model, extra) = Model::from_checkpoint(bytes, None)?;
        let trainer: Trainer = serde_json::from_value(extra["trainer"].clone())
            .map_err(|e| ModelError::CorruptCheckpoint(format!("no trainer state: {e}")))?;
        if trainer.config.model_kind != model.kind() {
            return Err(
                ModelError::VersionMismatch("trainer and model kinds differ".into()).into(),
            );
        }
        Ok((trainer, model))
    }
}
