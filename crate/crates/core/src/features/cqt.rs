use std::f64::consts::PI;
use std::sync::OnceLock;

use super::{AudioClip, FeatureError, TARGET_SAMPLE_RATE};

/// Constant-Q analysis parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CqtConfig {
    pub bins: usize,
    pub bins_per_octave: usize,
    pub fmin: f64,
    pub hop: usize,
    pub sample_rate: u32,
}

impl Default for CqtConfig {
    fn default() -> Self {
        Self {
            bins: 88,
            bins_per_octave: 12,
            fmin: 27.5,
            hop: 512,
            sample_rate: TARGET_SAMPLE_RATE,
        }
    }
}

impl CqtConfig {
    pub fn frame_rate(&self) -> f64 {
        self.sample_rate as f64 / self.hop as f64
    }

    pub fn quality(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn frequency(&self, bin: usize) -> f64 {
        self.fmin * 2f64.powf(bin as f64 / self.bins_per_octave as f64)
    }
}

/// Center frequency of piano-aligned bin `f` (A0 = 27.5 Hz, 12 bins per octave).
pub fn bin_frequency(f: usize) -> Result<f64, FeatureError> {
    let cfg = CqtConfig::default();
    if f >= cfg.bins {
        return Err(FeatureError::IndexOutOfRange(f));
    }
    Ok(cfg.frequency(f))
}

/// Log-compressed CQT magnitudes, `(bins, frames)` row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct CqtMatrix {
    data: Vec<f32>,
    bins: usize,
    frames: usize,
    frame_rate: f64,
}

impl CqtMatrix {
    pub fn from_vec(data: Vec<f32>, bins: usize, frames: usize, frame_rate: f64) -> Self {
        assert_eq!(data.len(), bins * frames);
        Self {
            data,
            bins,
            frames,
            frame_rate,
        }
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn frame_rate(&self) -> f64 {
        self.frame_rate
    }

    pub fn get(&self, bin: usize, frame: usize) -> f32 {
        self.data[bin * self.frames + frame]
    }

    /// Bin with the largest value in `frame` (first on ties).
    pub fn argmax_bin(&self, frame: usize) -> usize {
        (0..self.bins)
            .fold((0, f32::NEG_INFINITY), |best, b| {
                let v = self.get(b, frame);
                if v > best.1 {
                    (b, v)
                } else {
                    best
                }
            })
            .0
    }

    pub fn slice_frames(&self, start: usize, len: usize) -> CqtMatrix {
        let mut data = Vec::with_capacity(self.bins * len);
        for b in 0..self.bins {
            let row = b * self.frames + start;
            data.extend_from_slice(&self.data[row..row + len]);
        }
        CqtMatrix::from_vec(data, self.bins, len, self.frame_rate)
    }

    /// Append `extra` zero frames on the right.
    pub fn pad_frames(&self, extra: usize) -> CqtMatrix {
        let frames = self.frames + extra;
        let mut data = vec![0.0; self.bins * frames];
        for b in 0..self.bins {
            data[b * frames..b * frames + self.frames]
                .copy_from_slice(&self.data[b * self.frames..(b + 1) * self.frames]);
        }
        CqtMatrix::from_vec(data, self.bins, frames, self.frame_rate)
    }
}

struct Kernel {
    len: usize,
    cos: Vec<f32>,
    sin: Vec<f32>,
}

/// Precomputed Hann-windowed complex exponentials, one per bin.
pub struct CqtKernels {
    config: CqtConfig,
    kernels: Vec<Kernel>,
}

impl CqtKernels {
    pub fn new(config: CqtConfig) -> Self {
        let q = config.quality();
        let sr = config.sample_rate as f64;
        let kernels = (0..config.bins)
            .map(|k| {
                let freq = config.frequency(k);
                let len = (q * sr / freq).ceil() as usize;
                let half = len as f64 / 2.0;
                let window: Vec<f64> = (0..len)
                    .map(|n| 0.5 - 0.5 * (2.0 * PI * (n as f64 + 0.5) / len as f64).cos())
                    .collect();
                // amplitude units: a centred sinusoid of amplitude A gives |X| ≈ A
                let norm = 2.0 / window.iter().sum::<f64>();
                let (mut cos, mut sin) = (Vec::with_capacity(len), Vec::with_capacity(len));
                for (n, w) in window.iter().enumerate() {
                    let phase = 2.0 * PI * freq * (n as f64 - half) / sr;
                    cos.push((w * norm * phase.cos()) as f32);
                    sin.push((w * norm * phase.sin()) as f32);
                }
                Kernel { len, cos, sin }
            })
            .collect();
        Self { config, kernels }
    }

    pub fn config(&self) -> &CqtConfig {
        &self.config
    }

    pub fn transform(&self, clip: &AudioClip) -> Result<CqtMatrix, FeatureError> {
        let cfg = &self.config;
        if clip.sample_rate != cfg.sample_rate {
            return Err(FeatureError::SampleRateMismatch {
                expected: cfg.sample_rate,
                actual: clip.sample_rate,
            });
        }
        let n = clip.samples.len();
        if n < cfg.hop {
            return Err(FeatureError::ClipTooShort {
                samples: n,
                hop: cfg.hop,
            });
        }
        let frames = n / cfg.hop;
        let mut data = vec![0f32; cfg.bins * frames];
        for t in 0..frames {
            let center = (t * cfg.hop + cfg.hop / 2) as isize;
            for (b, k) in self.kernels.iter().enumerate() {
                let start = center - (k.len / 2) as isize;
                let lo = (-start).max(0) as usize;
                let hi = ((n as isize - start).min(k.len as isize)).max(lo as isize) as usize;
                let x =
                    &clip.samples[(start + lo as isize) as usize..(start + hi as isize) as usize];
                let (re, im) = dot2(x, &k.cos[lo..hi], &k.sin[lo..hi]);
                data[b * frames + t] = (re.hypot(im)).ln_1p();
            }
        }
        Ok(CqtMatrix::from_vec(
            data,
            cfg.bins,
            frames,
            cfg.frame_rate(),
        ))
    }
}

fn dot2(x: &[f32], c: &[f32], s: &[f32]) -> (f32, f32) {
    const L: usize = 8;
    let mut re = [0f32; L];
    let mut im = [0f32; L];
    let chunks = x.len() / L;
    for i in 0..chunks {
        let xs = &x[i * L..i * L + L];
        let cs = &c[i * L..i * L + L];
        let ss = &s[i * L..i * L + L];
        for j in 0..L {
            re[j] += xs[j] * cs[j];
            im[j] += xs[j] * ss[j];
        }
    }
    let mut r: f32 = re.iter().sum();
    let mut m: f32 = im.iter().sum();
    for i in chunks * L..x.len() {
        r += x[i] * c[i];
        m += x[i] * s[i];
    }
    (r, m)
}

fn default_kernels() -> &'static CqtKernels {
    static KERNELS: OnceLock<CqtKernels> = OnceLock::new();
    KERNELS.get_or_init(|| CqtKernels::new(CqtConfig::default()))
}

/// 88-bin, 12-per-octave CQT from 27.5 Hz with a 512-sample hop and no center
/// padding, compressed as `ln(1 + |X|)`.
pub fn compute_cqt(clip: &AudioClip) -> Result<CqtMatrix, FeatureError> {
    default_kernels().transform(clip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn harmonic_tone(freq: f64, amps: &[f64], seconds: f64) -> AudioClip {
        let n = (seconds * 16_000.0) as usize;
        let samples = (0..n)
            .map(|i| {
                let t = i as f64 / 16_000.0;
                amps.iter()
                    .enumerate()
                    .map(|(k, a)| a * (2.0 * PI * (k + 1) as f64 * freq * t).sin())
                    .sum::<f64>() as f32
                    * 0.5
            })
            .collect();
        AudioClip::new(samples, 16_000)
    }

    #[test]
    fn unit_sine_has_unit_magnitude() {
        let clip = harmonic_tone(440.0, &[1.0], 2.0);
        let cqt = compute_cqt(&clip).unwrap();
        // harmonic_tone plays at amplitude 0.5
        let mag = cqt.get(48, 30).exp_m1();
        assert!((mag - 0.5).abs() < 0.01, "{mag}");
    }

    #[test]
    fn bin_frequencies_follow_the_piano() {
        assert_eq!(bin_frequency(0).unwrap(), 27.5);
        assert!((bin_frequency(48).unwrap() - 440.0).abs() < 1e-9);
        assert!((bin_frequency(87).unwrap() - 4186.009).abs() < 1e-3);
        assert!(matches!(
            bin_frequency(88),
            Err(FeatureError::IndexOutOfRange(88))
        ));
    }

    #[test]
    fn ten_seconds_give_312_frames() {
        let cqt = compute_cqt(&AudioClip::new(vec![0.0; 160_000], 16_000)).unwrap();
        assert_eq!((cqt.bins(), cqt.frames()), (88, 312));
        assert!(cqt.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn frame_count_is_floor_of_samples_over_hop() {
        for n in [512, 513, 1023, 1024, 5000] {
            let cqt = compute_cqt(&AudioClip::new(vec![0.01; n], 16_000)).unwrap();
            assert_eq!(cqt.frames(), n / 512);
        }
        assert!(matches!(
            compute_cqt(&AudioClip::new(vec![0.0; 511], 16_000)),
            Err(FeatureError::ClipTooShort { .. })
        ));
        assert!(matches!(
            compute_cqt(&AudioClip::new(vec![0.0; 4096], 44_100)),
            Err(FeatureError::SampleRateMismatch { .. })
        ));
    }

    #[test]
    fn a4_peaks_at_bin_48() {
        let cqt = compute_cqt(&harmonic_tone(440.0, &[1.0], 2.0)).unwrap();
        for t in 10..cqt.frames() - 10 {
            assert_eq!(cqt.argmax_bin(t), 48, "frame {t}");
        }
    }

    #[test]
    fn semitone_transposition_shifts_argmax_by_one() {
        let amps = [1.0, 0.5, 0.3, 0.2];
        for bin in 12..=75 {
            let f0 = bin_frequency(bin).unwrap();
            let base = compute_cqt(&harmonic_tone(f0, &amps, 1.5)).unwrap();
            let up = compute_cqt(&harmonic_tone(f0 * 2f64.powf(1.0 / 12.0), &amps, 1.5)).unwrap();
            let mid = base.frames() / 2;
            assert_eq!(base.argmax_bin(mid), bin);
            assert_eq!(up.argmax_bin(mid), bin + 1);
        }
    }

    #[test]
    fn doubling_amplitude_never_decreases_a_cell() {
        let clip = harmonic_tone(220.0, &[1.0, 0.7, 0.2, 0.1], 1.0);
        let louder = AudioClip::new(clip.samples.iter().map(|v| v * 2.0).collect(), 16_000);
        let a = compute_cqt(&clip).unwrap();
        let b = compute_cqt(&louder).unwrap();
        assert!(a.data().iter().zip(b.data()).all(|(x, y)| y >= x));
    }
}
