use rand::Rng;

use super::blocks::{DecoderBlock, DecoderBlockCache, EncoderBlock, EncoderBlockCache};
use super::EncoderConfig;
use crate::nn::{join, Mode, Module, Param, Tensor};

/// Four residual blocks; blocks 1–3 halve frequency and time.
#[derive(Clone, Debug)]
pub struct Encoder {
    pub blocks: Vec<EncoderBlock>,
}

pub struct EncoderCache {
    blocks: Vec<EncoderBlockCache>,
}

impl EncoderCache {
    /// Skip taps at full, 1/2 and 1/4 resolution.
    pub fn skips(&self) -> [&Tensor; 3] {
        [&self.blocks[0].h2, &self.blocks[1].h2, &self.blocks[2].h2]
    }
}

impl Encoder {
    pub fn new(rng: &mut impl Rng, cfg: &EncoderConfig) -> Self {
        let c = cfg.channels;
        let blocks = vec![
            EncoderBlock::new(rng, 1, c[0], 2, cfg.slope),
            EncoderBlock::new(rng, c[0], c[1], 2, cfg.slope),
            EncoderBlock::new(rng, c[1], c[2], 2, cfg.slope),
            EncoderBlock::new(rng, c[2], c[3], 1, cfg.slope),
        ];
        Self { blocks }
    }

    /// `(n, 1, 88, T)` → `(n, C, 11, T/8)`.
    pub fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, EncoderCache) {
        let mut h = x.clone();
        let mut caches = Vec::with_capacity(4);
        for b in &self.blocks {
            let (y, c) = b.forward(&h, mode);
            caches.push(c);
            h = y;
        }
        (h, EncoderCache { blocks: caches })
    }

    pub fn commit_stats(&mut self, cache: &EncoderCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.commit_stats(c);
        }
    }

    /// Backpropagate into the encoder parameters; the input gradient is dropped.
    pub fn backward(
        &mut self,
        cache: &EncoderCache,
        dz: &Tensor,
        dskips: Option<&[Tensor; 3]>,
        param_grads: bool,
    ) {
        let mut d = dz.clone();
        for i in (0..4).rev() {
            let dskip = dskips.and_then(|s| s.get(i));
            d = self.blocks[i].backward(&cache.blocks[i], &d, dskip, param_grads);
        }
    }

    pub fn skip_channels(&self) -> [usize; 3] {
        [
            self.blocks[0].conv2.out_channels(),
            self.blocks[1].conv2.out_channels(),
            self.blocks[2].conv2.out_channels(),
        ]
    }
}

impl Module for Encoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &[f32])) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_buffers(&join(prefix, &format!("block{i}")), f);
        }
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f32])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}

/// Pianoroll decoder: four residual blocks mirroring the encoder, optionally fed
/// the encoder skip taps. Output `(n, M, 88, T)` logits.
#[derive(Clone, Debug)]
pub struct RollDecoder {
    pub blocks: Vec<DecoderBlock>,
}

pub struct RollDecoderCache {
    blocks: Vec<DecoderBlockCache>,
}

/// Logit prior of the last roll layer; pianorolls are overwhelmingly empty.
const ROLL_BIAS_PRIOR: f32 = -3.0;

impl RollDecoder {
    pub fn new(
        rng: &mut impl Rng,
        cfg: &EncoderConfig,
        input_channels: usize,
        instruments: usize,
        with_skips: bool,
    ) -> Self {
        let c = cfg.channels;
        let s = |ch: usize| if with_skips { ch } else { 0 };
        let mut blocks = vec![
            DecoderBlock::new(rng, input_channels, c[2], 0, c[2], 1, false, cfg.slope),
            DecoderBlock::new(rng, c[2], c[1], s(c[2]), c[1], 2, false, cfg.slope),
            DecoderBlock::new(rng, c[1], c[0], s(c[1]), c[0], 2, false, cfg.slope),
            DecoderBlock::new(rng, c[0], c[0], s(c[0]), instruments, 2, true, cfg.slope),
        ];
        blocks[3].conv3.bias.value.fill(ROLL_BIAS_PRIOR);
        Self { blocks }
    }

    pub fn uses_skips(&self) -> bool {
        self.blocks[1].skip_channels() > 0
    }

    pub fn input_channels(&self) -> usize {
        self.blocks[0].up.in_channels()
    }

    /// `skips` in encoder order (full, 1/2, 1/4 resolution).
    pub fn forward(
        &self,
        z: &Tensor,
        skips: Option<[&Tensor; 3]>,
        mode: Mode,
    ) -> (Tensor, RollDecoderCache) {
        let mut caches = Vec::with_capacity(4);
        let (mut h, c) = self.blocks[0].forward(z, None, mode);
        caches.push(c);
        for (i, b) in self.blocks.iter().enumerate().skip(1) {
            let skip = skips.map(|s| s[3 - i]);
            let (y, c) = b.forward(&h, skip, mode);
            caches.push(c);
            h = y;
        }
        (h, RollDecoderCache { blocks: caches })
    }

    pub fn commit_stats(&mut self, cache: &RollDecoderCache) {
        for (b, c) in self.blocks.iter_mut().zip(&cache.blocks) {
            b.commit_stats(c);
        }
    }

    /// Returns the latent gradient and, with skips, the skip gradients in encoder order.
    pub fn backward(
        &mut self,
        cache: &RollDecoderCache,
        dy: &Tensor,
        param_grads: bool,
    ) -> (Tensor, Option<[Tensor; 3]>) {
        let mut d = dy.clone();
        let mut dskips: [Option<Tensor>; 3] = [None, None, None];
        for i in (0..4).rev() {
            let (dx, ds) = self.blocks[i].backward(&cache.blocks[i], &d, param_grads);
            if i > 0 {
                dskips[3 - i] = ds;
            }
            d = dx;
        }
        let dskips = match dskips {
            [Some(a), Some(b), Some(c)] => Some([a, b, c]),
            _ => None,
        };
        (d, dskips)
    }
}

impl Module for RollDecoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_params(&join(prefix, &format!("block{i}")), f);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_params_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &[f32])) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit_buffers(&join(prefix, &format!("block{i}")), f);
        }
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f32])) {
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_buffers_mut(&join(prefix, &format!("block{i}")), f);
        }
    }
}
