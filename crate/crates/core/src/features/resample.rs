use std::f64::consts::PI;

/// Zero crossings of the sinc kernel on each side.
const HALF_TAPS: f64 = 32.0;

fn blackman(x: f64) -> f64 {
    // x in [-1, 1]
    let t = (x + 1.0) * 0.5;
    0.42 - 0.5 * (2.0 * PI * t).cos() + 0.08 * (4.0 * PI * t).cos()
}

/// Band-limited windowed-sinc resampling; output length is `floor(n · to / from)`.
pub fn resample(input: &[f32], from: u32, to: u32) -> Vec<f32> {
    if from == to || input.is_empty() {
        return input.to_vec();
    }
    let ratio = to as f64 / from as f64;
    let out_len = (input.len() as u64 * to as u64 / from as u64) as usize;
    // cutoff relative to the input Nyquist, slightly below the output Nyquist
    let cutoff = ratio.min(1.0) * 0.97;
    let half_width = HALF_TAPS / cutoff;
    let mut out = Vec::with_capacity(out_len);
    for i in 0..out_len {
        let center = i as f64 / ratio;
        let lo = (center - half_width).ceil().max(0.0) as usize;
        let hi = ((center + half_width).floor() as usize).min(input.len() - 1);
        let mut acc = 0.0f64;
        for (j, &x) in input.iter().enumerate().take(hi + 1).skip(lo) {
            let d = j as f64 - center;
            let arg = PI * cutoff * d;
            let sinc = if arg.abs() < 1e-12 {
                1.0
            } else {
                arg.sin() / arg
            };
            acc += x as f64 * cutoff * sinc * blackman(d / half_width);
        }
        out.push(acc as f32);
    }
    out
}
