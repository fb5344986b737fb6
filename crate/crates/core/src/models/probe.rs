use std::ops::Range;

use rand::Rng;

use super::ModelError;
use crate::nn::{join, leaky_relu, leaky_relu_backward, Conv2d, Module, Param, Tensor, Window};

/// Per-second classifier on a frozen latent code: four time convolutions, mean pooling
/// of latent columns into seconds, then two fully-connected layers applied per second.
#[derive(Clone, Debug)]
pub struct Probe {
    pub convs: Vec<Conv2d>,
    pub fc1: Conv2d,
    pub fc2: Conv2d,
    /// Per-row input standardization `(z − shift) · scale`, fitted once on the
    /// frozen training codes.
    pub input_shift: Vec<f32>,
    pub input_scale: Vec<f32>,
    slope: f32,
}

pub struct ProbeCache {
    /// Inputs of each conv, then the final conv activation.
    acts: Vec<Tensor>,
    buckets: Vec<Range<usize>>,
    pooled: Tensor,
    hidden: Tensor,
}

/// Columns whose center time lies in `[s, s + 1)`, for `s < seconds`.
pub fn column_buckets(
    columns: usize,
    column_rate: f64,
    seconds: usize,
) -> Result<Vec<Range<usize>>, ModelError> {
    let center = |j: usize| (j as f64 + 0.5) / column_rate;
    (0..seconds)
        .map(|s| {
            let lo = (0..columns)
                .find(|&j| center(j) >= s as f64)
                .unwrap_or(columns);
            let hi = (lo..columns)
                .find(|&j| center(j) >= (s + 1) as f64)
                .unwrap_or(columns);
            if lo == hi {
                Err(ModelError::ShapeMismatch(format!(
                    "{columns} latent columns at {column_rate} Hz do not cover second {s}"
                )))
            } else {
                Ok(lo..hi)
            }
        })
        .collect()
}

impl Probe {
    pub fn new(
        rng: &mut impl Rng,
        input_rows: usize,
        hidden: usize,
        outputs: usize,
        slope: f32,
    ) -> Self {
        let win = Window::new((1, 3), (1, 1), (0, 1));
        let point = Window::new((1, 1), (1, 1), (0, 0));
        let convs = (0..4)
            .map(|i| Conv2d::new(rng, if i == 0 { input_rows } else { hidden }, hidden, win))
            .collect();
        Self {
            convs,
            fc1: Conv2d::new(rng, hidden, hidden, point),
            fc2: Conv2d::new(rng, hidden, outputs, point),
            input_shift: vec![0.0; input_rows],
            input_scale: vec![1.0; input_rows],
            slope,
        }
    }

    /// Set the input standardization to the per-row mean and inverse standard
    /// deviation over every column of `codes` (each `(n, κ, 1, τ)`).
    pub fn fit_standardization(&mut self, codes: &[&Tensor]) {
        let rows = self.input_rows();
        let mut sum = vec![0f64; rows];
        let mut sq = vec![0f64; rows];
        let mut count = 0usize;
        for z in codes {
            let (n, k, _, tau) = z.dims4();
            assert_eq!(k, rows);
            for s in 0..n {
                let d = z.sample(s);
                for r in 0..rows {
                    for &v in &d[r * tau..(r + 1) * tau] {
                        sum[r] += v as f64;
                        sq[r] += (v as f64) * (v as f64);
                    }
                }
            }
            count += n * tau;
        }
        if count == 0 {
            return;
        }
        for r in 0..rows {
            let mean = sum[r] / count as f64;
            let var = (sq[r] / count as f64 - mean * mean).max(0.0);
            self.input_shift[r] = mean as f32;
            self.input_scale[r] = (1.0 / (var + 1e-8).sqrt()) as f32;
        }
    }

    fn standardize(&self, z: &Tensor) -> Tensor {
        let (n, rows, _, tau) = z.dims4();
        let mut out = z.clone();
        for s in 0..n {
            let d = out.sample_mut(s);
            for r in 0..rows {
                for v in &mut d[r * tau..(r + 1) * tau] {
                    *v = (*v - self.input_shift[r]) * self.input_scale[r];
                }
            }
        }
        out
    }

    pub fn input_rows(&self) -> usize {
        self.convs[0].in_channels()
    }

    pub fn outputs(&self) -> usize {
        self.fc2.out_channels()
    }

    /// `(n, κ, 1, τ)` → `(n, outputs, 1, seconds)` logits.
    pub fn forward(
        &self,
        z: &Tensor,
        column_rate: f64,
        seconds: usize,
    ) -> Result<(Tensor, ProbeCache), ModelError> {
        let (n, rows, h, tau) = z.dims4();
        if rows != self.input_rows() || h != 1 {
            return Err(ModelError::ShapeMismatch(format!(
                "probe expects ({}, 1, τ) codes, got ({rows}, {h}, {tau})",
                self.input_rows()
            )));
        }
        let buckets = column_buckets(tau, column_rate, seconds)?;
        let mut acts = vec![self.standardize(z)];
        for conv in &self.convs {
            let pre = conv.forward(acts.last().expect("non-empty"));
            acts.push(leaky_relu(&pre, self.slope));
        }
        let feat = acts.last().expect("non-empty");
        let c = feat.shape()[1];
        let mut pooled = Tensor::zeros(&[n, c, 1, seconds]);
        for s in 0..n {
            let src = feat.sample(s);
            let dst = pooled.sample_mut(s);
            for ch in 0..c {
                let row = &src[ch * tau..(ch + 1) * tau];
                for (k, b) in buckets.iter().enumerate() {
                    dst[ch * seconds + k] = row[b.clone()].iter().sum::<f32>() / b.len() as f32;
                }
            }
        }
        let hidden = leaky_relu(&self.fc1.forward(&pooled), self.slope);
        let out = self.fc2.forward(&hidden);
        Ok((
            out,
            ProbeCache {
                acts,
                buckets,
                pooled,
                hidden,
            },
        ))
    }

    /// Accumulate parameter gradients; the code itself is frozen, so no input gradient.
    pub fn backward(&mut self, c: &ProbeCache, dy: &Tensor) {
        let dhidden = self.fc2.backward(&c.hidden, dy, true);
        let dpre = leaky_relu_backward(&c.hidden, &dhidden, self.slope);
        let dpooled = self.fc1.backward(&c.pooled, &dpre, true);
        let feat = c.acts.last().expect("non-empty");
        let (n, ch, _, tau) = feat.dims4();
        let seconds = c.buckets.len();
        let mut d = Tensor::zeros(feat.shape());
        for s in 0..n {
            let src = dpooled.sample(s);
            let dst = d.sample_mut(s);
            for k in 0..ch {
                for (j, b) in c.buckets.iter().enumerate() {
                    let g = src[k * seconds + j] / b.len() as f32;
                    for v in &mut dst[k * tau + b.start..k * tau + b.end] {
                        *v += g;
                    }
                }
            }
        }
        for i in (0..self.convs.len()).rev() {
            let dpre = leaky_relu_backward(&c.acts[i + 1], &d, self.slope);
            let want_input = i > 0;
            let dx = self.convs[i].backward(&c.acts[i], &dpre, true);
            if want_input {
                d = dx;
            }
        }
    }
}

impl Module for Probe {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for (i, c) in self.convs.iter().enumerate() {
            c.visit_params(&join(prefix, &format!("conv{i}")), f);
        }
        self.fc1.visit_params(&join(prefix, "fc1"), f);
        self.fc2.visit_params(&join(prefix, "fc2"), f);
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, c) in self.convs.iter_mut().enumerate() {
            c.visit_params_mut(&join(prefix, &format!("conv{i}")), f);
        }
        self.fc1.visit_params_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_params_mut(&join(prefix, "fc2"), f);
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &[f32])) {
        f(join(prefix, "input_shift"), &self.input_shift);
        f(join(prefix, "input_scale"), &self.input_scale);
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f32])) {
        f(join(prefix, "input_shift"), &mut self.input_shift);
        f(join(prefix, "input_scale"), &mut self.input_scale);
    }
}
