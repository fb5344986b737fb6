//! Single-file parameter archive: magic, format version, JSON header, little-endian
//! `f32` payload (values and both momentum buffers, then batch-norm statistics) and a
//! SHA-256 trailer over everything before it.

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use super::{Model, ModelConfig, ModelError, ModelKind};
use crate::nn::Module;

const MAGIC: &[u8; 4] = b"DCKP";
pub const CHECKPOINT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// `duo`, `unet` or `probe`.
    pub kind: String,
    pub config: Value,
    pub config_hash: String,
    pub steps_trained: u64,
    /// Caller-owned metadata (training config, epoch counters, ...).
    pub extra: Value,
    pub params: Vec<(String, Vec<usize>)>,
    pub buffers: Vec<(String, usize)>,
}

#[derive(Clone, Debug)]
pub struct RawCheckpoint {
    pub header: CheckpointHeader,
    payload: Vec<f32>,
}

fn corrupt(m: impl Into<String>) -> ModelError {
    ModelError::CorruptCheckpoint(m.into())
}

pub fn write_checkpoint(
    kind: &str,
    config: Value,
    steps_trained: u64,
    extra: Value,
    module: &dyn Module,
) -> Vec<u8> {
    let mut params = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    module.visit_params("", &mut |name, p| {
        params.push((name, p.value.shape().to_vec()));
        payload.extend_from_slice(p.value.data());
        payload.extend_from_slice(p.velocity.data());
        payload.extend_from_slice(p.alt_velocity.data());
    });
    let mut buffers = Vec::new();
    module.visit_buffers("", &mut |name, b| {
        buffers.push((name, b.len()));
        payload.extend_from_slice(b);
    });
    let header = CheckpointHeader {
        kind: kind.to_string(),
        config_hash: crate::digest::config_hash(&config),
        config,
        steps_trained,
        extra,
        params,
        buffers,
    };
    let json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(12 + json.len() + payload.len() * 4 + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    for v in payload {
        out.extend_from_slice(&v.to_le_bytes());
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn read_checkpoint(bytes: &[u8]) -> Result<RawCheckpoint, ModelError> {
    if bytes.len() < 12 + DIGEST_LEN {
        return Err(corrupt("file too short"));
    }
    if &bytes[..4] != MAGIC {
        return Err(corrupt("not a checkpoint (bad magic)"));
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(corrupt("checksum mismatch (truncated or modified file)"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(ModelError::VersionMismatch(format!(
            "format version {version}, this build reads {CHECKPOINT_VERSION}"
        )));
    }
    let hlen = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    let rest = &body[12..];
    if hlen > rest.len() {
        return Err(corrupt("header length exceeds file"));
    }
    let header: CheckpointHeader =
        serde_json::from_slice(&rest[..hlen]).map_err(|e| corrupt(format!("bad header: {e}")))?;
    let raw = &rest[hlen..];
    if raw.len() % 4 != 0 {
        return Err(corrupt("payload is not a whole number of f32 values"));
    }
    let payload: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    let expected: usize = header
        .params
        .iter()
        .map(|(_, s)| 3 * s.iter().product::<usize>())
        .sum::<usize>()
        + header.buffers.iter().map(|(_, n)| n).sum::<usize>();
    if payload.len() != expected {
        return Err(corrupt(format!(
            "payload holds {} values, header describes {expected}",
            payload.len()
        )));
    }
    Ok(RawCheckpoint { header, payload })
}

impl RawCheckpoint {
    /// Copy values, momentum buffers and statistics into a module of identical layout.
    pub fn restore_into(&self, module: &mut dyn Module) -> Result<(), ModelError> {
        let mut names = Vec::new();
        module.visit_params("", &mut |name, p| {
            names.push((name, p.value.shape().to_vec()))
        });
        if names != self.header.params {
            return Err(ModelError::ShapeMismatch(
                "checkpoint parameters do not match the model layout".into(),
            ));
        }
        let mut bufs = Vec::new();
        module.visit_buffers("", &mut |name, b| bufs.push((name, b.len())));
        if bufs != self.header.buffers {
            return Err(ModelError::ShapeMismatch(
                "checkpoint buffers do not match the model layout".into(),
            ));
        }
        let mut pos = 0;
        let payload = &self.payload;
        module.visit_params_mut("", &mut |_, p| {
            let n = p.value.len();
            p.value.data_mut().copy_from_slice(&payload[pos..pos + n]);
            p.velocity
                .data_mut()
                .copy_from_slice(&payload[pos + n..pos + 2 * n]);
            p.alt_velocity
                .data_mut()
                .copy_from_slice(&payload[pos + 2 * n..pos + 3 * n]);
            p.zero_grad();
            pos += 3 * n;
        });
        module.visit_buffers_mut("", &mut |_, b| {
            let n = b.len();
            b.copy_from_slice(&payload[pos..pos + n]);
            pos += n;
        });
        Ok(())
    }
}

impl Model {
    pub fn to_checkpoint(&self, extra: Value) -> Vec<u8> {
        let config = serde_json::to_value(self.config()).expect("config serializes");
        write_checkpoint(self.kind().name(), config, self.steps_trained, extra, self)
    }

    /// Rebuild a model from checkpoint bytes; `expect` rejects other model kinds.
    pub fn from_checkpoint(
        bytes: &[u8],
        expect: Option<ModelKind>,
    ) -> Result<(Model, Value), ModelError> {
        let raw = read_checkpoint(bytes)?;
        let kind: ModelKind = raw.header.kind.parse().map_err(|e: String| {
            ModelError::VersionMismatch(format!("not a model checkpoint: {e}"))
        })?;
        if let Some(want) = expect {
            if want != kind {
                return Err(ModelError::VersionMismatch(format!(
                    "checkpoint holds a {} model, expected {}",
                    kind.name(),
                    want.name()
                )));
            }
        }
        let cfg: ModelConfig = serde_json::from_value(raw.header.config.clone())
            .map_err(|e| corrupt(format!("bad model config: {e}")))?;
        if cfg.kind != kind {
            return Err(corrupt("header kind disagrees with its config"));
        }
        let mut model = Model::new(&cfg, 0)?;
        raw.restore_into(&mut model)?;
        model.steps_trained = raw.header.steps_trained;
        Ok((model, raw.header.extra))
    }
}
