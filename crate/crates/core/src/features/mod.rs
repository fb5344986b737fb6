//! Audio loading and the constant-Q input representation.

mod cqt;
mod resample;

use std::io::Cursor;

use thiserror::Error;

pub use cqt::{bin_frequency, compute_cqt, CqtConfig, CqtKernels, CqtMatrix};
pub use resample::resample;

pub const TARGET_SAMPLE_RATE: u32 = 16_000;

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("undecodable audio: {0}")]
    UndecodableAudio(String),
    #[error("clip too short: {samples} samples, need at least {hop}")]
    ClipTooShort { samples: usize, hop: usize },
    #[error("expected {expected} Hz audio, got {actual} Hz")]
    SampleRateMismatch { expected: u32, actual: u32 },
    #[error("bin index {0} out of range")]
    IndexOutOfRange(usize),
}

/// Mono waveform with samples nominally in `[-1, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Self {
        Self {
            samples,
            sample_rate,
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Decode audio bytes to a mono clip at `target_rate`.
///
/// RIFF/WAVE PCM (8/16/24/32-bit integer or 32-bit float) is decoded natively.
/// With the `external-decoder` feature, anything else goes through `ffmpeg`.
pub fn load_audio(bytes: &[u8], target_rate: u32) -> Result<AudioClip, FeatureError> {
    if bytes.len() >= 4 && &bytes[..4] == b"RIFF" {
        let clip = decode_wav(bytes)?;
        return Ok(to_mono_rate(clip.0, clip.1, clip.2, target_rate));
    }
    #[cfg(feature = "external-decoder")]
    {
        let wav = external::decode_with_ffmpeg(bytes, target_rate)?;
        let clip = decode_wav(&wav)?;
        return Ok(to_mono_rate(clip.0, clip.1, clip.2, target_rate));
    }
    #[allow(unreachable_code)]
    Err(FeatureError::UndecodableAudio(
        "not a RIFF/WAVE file".into(),
    ))
}

/// Interleaved samples, channel count and sample rate.
fn decode_wav(bytes: &[u8]) -> Result<(Vec<f32>, usize, u32), FeatureError> {
    let err = |e: hound::Error| FeatureError::UndecodableAudio(e.to_string());
    let mut reader = hound::WavReader::new(Cursor::new(bytes)).map_err(err)?;
    let spec = reader.spec();
    let samples: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<Result<_, _>>()
            .map_err(err)?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<Result<_, _>>()
                .map_err(err)?
        }
    };
    if spec.channels == 0 {
        return Err(FeatureError::UndecodableAudio("zero channels".into()));
    }
    Ok((samples, spec.channels as usize, spec.sample_rate))
}

fn to_mono_rate(interleaved: Vec<f32>, channels: usize, rate: u32, target_rate: u32) -> AudioClip {
    let mono: Vec<f32> = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect()
    };
    AudioClip::new(resample(&mono, rate, target_rate), target_rate)
}

/// Encode a clip as 16-bit PCM mono WAV.
pub fn write_wav(clip: &AudioClip) -> Vec<u8> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut cursor = Cursor::new(Vec::new());
    {
        let mut writer = hound::WavWriter::new(&mut cursor, spec).expect("in-memory WAV");
        for &s in &clip.samples {
            let v = (s.clamp(-1.0, 1.0) * i16::MAX as f32).round() as i16;
            writer.write_sample(v).expect("in-memory WAV");
        }
        writer.finalize().expect("in-memory WAV");
    }
    cursor.into_inner()
}

#[cfg(feature = "external-decoder")]
mod external {
    use std::io::Write;
    use std::process::{Command, Stdio};

    use super::FeatureError;

    pub fn decode_with_ffmpeg(bytes: &[u8], rate: u32) -> Result<Vec<u8>, FeatureError> {
        let fail = |m: String| FeatureError::UndecodableAudio(m);
        let mut child = Command::new("ffmpeg")
            .args([
                "-loglevel",
                "error",
                "-i",
                "pipe:0",
                "-ac",
                "1",
                "-ar",
                &rate.to_string(),
                "-f",
                "wav",
                "pipe:1",
            ])
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::piped())
            .spawn()
            .map_err(|e| fail(format!("cannot run ffmpeg: {e}")))?;
        let mut stdin = child.stdin.take().expect("piped stdin");
        let input = bytes.to_vec();
        let writer = std::thread::spawn(move || stdin.write_all(&input));
        let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
        let _ = writer.join();
        if !out.status.success() {
            return Err(fail(
                String::from_utf8_lossy(&out.stderr).trim().to_string(),
            ));
        }
        Ok(out.stdout)
    }
}
