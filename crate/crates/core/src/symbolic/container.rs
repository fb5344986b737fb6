//! Gzip-compressed dense tensor container: magic, version, JSON header, payload.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;
use serde::{Deserialize, Serialize};

use super::{InstrumentMap, Pianoroll, SymbolicError, PITCH_BINS};
use crate::features::CqtMatrix;

const ROLL_MAGIC: &[u8; 4] = b"DROL";
const CQT_MAGIC: &[u8; 4] = b"DCQT";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RollHeader {
    shape: [usize; 3],
    frame_rate: f64,
    instrument_map: InstrumentMap,
}

#[derive(Serialize, Deserialize)]
struct CqtHeader {
    shape: [usize; 2],
    frame_rate: f64,
}

fn corrupt(msg: impl Into<String>) -> SymbolicError {
    SymbolicError::CorruptContainer(msg.into())
}

fn encode(magic: &[u8; 4], header: &impl Serialize, payload: &[u8]) -> Vec<u8> {
    let header = serde_json::to_vec(header).expect("header serializes");
    let mut raw = Vec::with_capacity(12 + header.len() + payload.len());
    raw.extend_from_slice(magic);
    raw.extend_from_slice(&VERSION.to_le_bytes());
    raw.extend_from_slice(&(header.len() as u32).to_le_bytes());
    raw.extend_from_slice(&header);
    raw.extend_from_slice(payload);
    let mut enc = GzEncoder::new(Vec::new(), Compression::default());
    enc.write_all(&raw).expect("in-memory gzip");
    enc.finish().expect("in-memory gzip")
}

fn decode<H: for<'de> Deserialize<'de>>(
    magic: &[u8; 4],
    bytes: &[u8],
) -> Result<(H, Vec<u8>), SymbolicError> {
    let mut raw = Vec::new();
    GzDecoder::new(bytes)
        .read_to_end(&mut raw)
        .map_err(|e| corrupt(format!("gzip: {e}")))?;
    if raw.len() < 12 || &raw[..4] != magic {
        return Err(corrupt("bad magic"));
    }
    let version = u32::from_le_bytes(raw[4..8].try_into().unwrap());
    if version != VERSION {
        return Err(corrupt(format!("unsupported version {version}")));
    }
    let hlen = u32::from_le_bytes(raw[8..12].try_into().unwrap()) as usize;
    if raw.len() < 12 + hlen {
        return Err(corrupt("truncated header"));
    }
    let header =
        serde_json::from_slice(&raw[12..12 + hlen]).map_err(|e| corrupt(format!("header: {e}")))?;
    Ok((header, raw[12 + hlen..].to_vec()))
}

/// Serialize a roll with bit-packed cells.
pub fn write_roll(roll: &Pianoroll) -> Vec<u8> {
    let cells = roll.cells();
    let mut packed = vec![0u8; cells.len().div_ceil(8)];
    for (i, &c) in cells.iter().enumerate() {
        packed[i / 8] |= c << (i % 8);
    }
    let (f, t, m) = roll.shape();
    let header = RollHeader {
        shape: [f, t, m],
        frame_rate: roll.frame_rate(),
        instrument_map: roll.instrument_map().clone(),
    };
    encode(ROLL_MAGIC, &header, &packed)
}

pub fn read_roll(bytes: &[u8]) -> Result<Pianoroll, SymbolicError> {
    let (header, packed): (RollHeader, _) = decode(ROLL_MAGIC, bytes)?;
    let [f, t, m] = header.shape;
    if f != PITCH_BINS || m != header.instrument_map.num_instruments() {
        return Err(corrupt(format!(
            "inconsistent roll shape {:?}",
            header.shape
        )));
    }
    let len = f * t * m;
    if packed.len() != len.div_ceil(8) {
        return Err(corrupt("payload length does not match shape"));
    }
    let cells = (0..len).map(|i| (packed[i / 8] >> (i % 8)) & 1).collect();
    Pianoroll::from_cells(cells, t, header.frame_rate, header.instrument_map)
}

pub fn write_cqt(cqt: &CqtMatrix) -> Vec<u8> {
    let payload: Vec<u8> = cqt.data().iter().flat_map(|v| v.to_le_bytes()).collect();
    let header = CqtHeader {
        shape: [cqt.bins(), cqt.frames()],
        frame_rate: cqt.frame_rate(),
    };
    encode(CQT_MAGIC, &header, &payload)
}

pub fn read_cqt(bytes: &[u8]) -> Result<CqtMatrix, SymbolicError> {
    let (header, payload): (CqtHeader, _) = decode(CQT_MAGIC, bytes)?;
    let [bins, frames] = header.shape;
    if payload.len() != bins * frames * 4 {
        return Err(corrupt("payload length does not match shape"));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok(CqtMatrix::from_vec(data, bins, frames, header.frame_rate))
}
