//! Residual encoder/decoder blocks and the 1-D transposed-conv heads.

use rand::Rng;

use crate::nn::{
    concat_channels, join, leaky_relu, leaky_relu_backward, split_channels, BatchNorm2d, BnCache,
    Conv2d, ConvTranspose2d, Mode, Module, Param, Tensor, Window,
};

fn add(a: &Tensor, b: &Tensor) -> Tensor {
    let mut out = a.clone();
    out.add_assign(b);
    out
}

/// conv → bn → act → conv → bn → act (skip tap) → strided conv, plus a shortcut.
#[derive(Clone, Debug)]
pub struct EncoderBlock {
    pub conv1: Conv2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub conv3: Conv2d,
    /// Present when the block changes shape.
    pub shortcut: Option<Conv2d>,
    slope: f32,
}

pub struct EncoderBlockCache {
    x: Tensor,
    bn1: BnCache,
    h1: Tensor,
    bn2: BnCache,
    /// Activation before the strided conv; also the skip tap.
    pub h2: Tensor,
    sum: Tensor,
}

impl EncoderBlock {
    pub fn new(rng: &mut impl Rng, cin: usize, cout: usize, stride: usize, slope: f32) -> Self {
        let same = Window::new((3, 3), (1, 1), (1, 1));
        let shortcut = (cin != cout || stride != 1).then(|| {
            Conv2d::new(
                rng,
                cin,
                cout,
                Window::new((1, 1), (stride, stride), (0, 0)),
            )
        });
        Self {
            conv1: Conv2d::new(rng, cin, cout, same),
            bn1: BatchNorm2d::new(cout),
            conv2: Conv2d::new(rng, cout, cout, same),
            bn2: BatchNorm2d::new(cout),
            conv3: Conv2d::new(
                rng,
                cout,
                cout,
                Window::new((3, 3), (stride, stride), (1, 1)),
            ),
            shortcut,
            slope,
        }
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, EncoderBlockCache) {
        let a1 = self.conv1.forward(x);
        let (n1, bn1) = self.bn1.forward(&a1, mode);
        let h1 = leaky_relu(&n1, self.slope);
        let a2 = self.conv2.forward(&h1);
        let (n2, bn2) = self.bn2.forward(&a2, mode);
        let h2 = leaky_relu(&n2, self.slope);
        let a3 = self.conv3.forward(&h2);
        let sum = match &self.shortcut {
            Some(sc) => add(&a3, &sc.forward(x)),
            None => add(&a3, x),
        };
        let y = leaky_relu(&sum, self.slope);
        let cache = EncoderBlockCache {
            x: x.clone(),
            bn1,
            h1,
            bn2,
            h2,
            sum,
        };
        (y, cache)
    }

    pub fn commit_stats(&mut self, cache: &EncoderBlockCache) {
        self.bn1.commit_stats(&cache.bn1);
        self.bn2.commit_stats(&cache.bn2);
    }

    /// `dskip` is the gradient arriving at the skip tap, if the tap was used.
    pub fn backward(
        &mut self,
        c: &EncoderBlockCache,
        dy: &Tensor,
        dskip: Option<&Tensor>,
        param_grads: bool,
    ) -> Tensor {
        let s = self.slope;
        let dsum = leaky_relu_backward(&c.sum, dy, s);
        let mut dh2 = self.conv3.backward(&c.h2, &dsum, param_grads);
        if let Some(d) = dskip {
            dh2.add_assign(d);
        }
        // h2 = lrelu(n2): sign of n2 equals sign of h2
        let dn2 = leaky_relu_backward(&c.h2, &dh2, s);
        let da2 = self.bn2.backward(&c.bn2, &dn2, param_grads);
        let dh1 = self.conv2.backward(&c.h1, &da2, param_grads);
        let dn1 = leaky_relu_backward(&c.h1, &dh1, s);
        let da1 = self.bn1.backward(&c.bn1, &dn1, param_grads);
        let mut dx = self.conv1.backward(&c.x, &da1, param_grads);
        match &mut self.shortcut {
            Some(sc) => dx.add_assign(&sc.backward(&c.x, &dsum, param_grads)),
            None => dx.add_assign(&dsum),
        }
        dx
    }
}

impl Module for EncoderBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        self.conv1.visit_params(&join(prefix, "conv1"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        self.conv3.visit_params(&join(prefix, "conv3"), f);
        if let Some(sc) = &self.shortcut {
            sc.visit_params(&join(prefix, "shortcut"), f);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.conv1.visit_params_mut(&join(prefix, "conv1"), f);
        self.bn1.visit_params_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_params_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_params_mut(&join(prefix, "bn2"), f);
        self.conv3.visit_params_mut(&join(prefix, "conv3"), f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_params_mut(&join(prefix, "shortcut"), f);
        }
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &[f32])) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f32])) {
        self.bn1.visit_buffers_mut(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers_mut(&join(prefix, "bn2"), f);
    }
}

/// Mirror of [`EncoderBlock`]: transposed conv (upsampling) → bn → act → [concat skip] →
/// conv → bn → act → conv, plus a transposed 1×1 shortcut.
#[derive(Clone, Debug)]
pub struct DecoderBlock {
    pub up: ConvTranspose2d,
    pub bn1: BatchNorm2d,
    pub conv2: Conv2d,
    pub bn2: BatchNorm2d,
    pub conv3: Conv2d,
    pub shortcut: Option<ConvTranspose2d>,
    skip_channels: usize,
    /// Final block of a decoder: no activation on the output.
    linear_output: bool,
    slope: f32,
}

pub struct DecoderBlockCache {
    x: Tensor,
    bn1: BnCache,
    h1: Tensor,
    cat: Tensor,
    bn2: BnCache,
    h2: Tensor,
    sum: Tensor,
}

impl DecoderBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        rng: &mut impl Rng,
        cin: usize,
        mid: usize,
        skip_channels: usize,
        cout: usize,
        stride: usize,
        linear_output: bool,
        slope: f32,
    ) -> Self {
        let same = Window::new((3, 3), (1, 1), (1, 1));
        let op = stride - 1;
        let shortcut = (cin != cout || stride != 1).then(|| {
            ConvTranspose2d::new(
                rng,
                cin,
                cout,
                Window::new((1, 1), (stride, stride), (0, 0)),
                (op, op),
            )
        });
        Self {
            up: ConvTranspose2d::new(
                rng,
                cin,
                mid,
                Window::new((3, 3), (stride, stride), (1, 1)),
                (op, op),
            ),
            bn1: BatchNorm2d::new(mid),
            conv2: Conv2d::new(rng, mid + skip_channels, mid, same),
            bn2: BatchNorm2d::new(mid),
            conv3: Conv2d::new(rng, mid, cout, same),
            shortcut,
            skip_channels,
            linear_output,
            slope,
        }
    }

    pub fn skip_channels(&self) -> usize {
        self.skip_channels
    }

    pub fn forward(
        &self,
        x: &Tensor,
        skip: Option<&Tensor>,
        mode: Mode,
    ) -> (Tensor, DecoderBlockCache) {
        assert_eq!(
            skip.is_some(),
            self.skip_channels > 0,
            "decoder skip wiring"
        );
        let a1 = self.up.forward(x);
        let (n1, bn1) = self.bn1.forward(&a1, mode);
        let h1 = leaky_relu(&n1, self.slope);
        let cat = match skip {
            Some(s) => concat_channels(&h1, s),
            None => h1.clone(),
        };
        let a2 = self.conv2.forward(&cat);
        let (n2, bn2) = self.bn2.forward(&a2, mode);
        let h2 = leaky_relu(&n2, self.slope);
        let a3 = self.conv3.forward(&h2);
        let sum = match &self.shortcut {
            Some(sc) => add(&a3, &sc.forward(x)),
            None => add(&a3, x),
        };
        let y = if self.linear_output {
            sum.clone()
        } else {
            leaky_relu(&sum, self.slope)
        };
        let cache = DecoderBlockCache {
            x: x.clone(),
            bn1,
            h1,
            cat,
            bn2,
            h2,
            sum,
        };
        (y, cache)
    }

    pub fn commit_stats(&mut self, cache: &DecoderBlockCache) {
        self.bn1.commit_stats(&cache.bn1);
        self.bn2.commit_stats(&cache.bn2);
    }

    /// Returns `(dx, dskip)`.
    pub fn backward(
        &mut self,
        c: &DecoderBlockCache,
        dy: &Tensor,
        param_grads: bool,
    ) -> (Tensor, Option<Tensor>) {
        let s = self.slope;
        let dsum = if self.linear_output {
            dy.clone()
        } else {
            leaky_relu_backward(&c.sum, dy, s)
        };
        let dh2 = self.conv3.backward(&c.h2, &dsum, param_grads);
        let dn2 = leaky_relu_backward(&c.h2, &dh2, s);
        let da2 = self.bn2.backward(&c.bn2, &dn2, param_grads);
        let dcat = self.conv2.backward(&c.cat, &da2, param_grads);
        let (dh1, dskip) = if self.skip_channels > 0 {
            let (a, b) = split_channels(&dcat, c.h1.shape()[1]);
            (a, Some(b))
        } else {
            (dcat, None)
        };
        let dn1 = leaky_relu_backward(&c.h1, &dh1, s);
        let da1 = self.bn1.backward(&c.bn1, &dn1, param_grads);
        let mut dx = self.up.backward(&c.x, &da1, param_grads);
        match &mut self.shortcut {
            Some(sc) => dx.add_assign(&sc.backward(&c.x, &dsum, param_grads)),
            None => dx.add_assign(&dsum),
        }
        (dx, dskip)
    }
}

impl Module for DecoderBlock {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        self.up.visit_params(&join(prefix, "up"), f);
        self.bn1.visit_params(&join(prefix, "bn1"), f);
        self.conv2.visit_params(&join(prefix, "conv2"), f);
        self.bn2.visit_params(&join(prefix, "bn2"), f);
        self.conv3.visit_params(&join(prefix, "conv3"), f);
        if let Some(sc) = &self.shortcut {
            sc.visit_params(&join(prefix, "shortcut"), f);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        self.up.visit_params_mut(&join(prefix, "up"), f);
        self.bn1.visit_params_mut(&join(prefix, "bn1"), f);
        self.conv2.visit_params_mut(&join(prefix, "conv2"), f);
        self.bn2.visit_params_mut(&join(prefix, "bn2"), f);
        self.conv3.visit_params_mut(&join(prefix, "conv3"), f);
        if let Some(sc) = &mut self.shortcut {
            sc.visit_params_mut(&join(prefix, "shortcut"), f);
        }
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &[f32])) {
        self.bn1.visit_buffers(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers(&join(prefix, "bn2"), f);
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f32])) {
        self.bn1.visit_buffers_mut(&join(prefix, "bn1"), f);
        self.bn2.visit_buffers_mut(&join(prefix, "bn2"), f);
    }
}

/// Stack of transposed convolutions along time only (kernel 1×3, stride 1×2),
/// leaky ReLU between layers and a linear last layer. Input `(n, κ, 1, τ)`.
#[derive(Clone, Debug)]
pub struct SeqDecoder {
    pub layers: Vec<ConvTranspose2d>,
    slope: f32,
}

pub struct SeqDecoderCache {
    inputs: Vec<Tensor>,
}

impl SeqDecoder {
    pub fn new(
        rng: &mut impl Rng,
        cin: usize,
        hidden: usize,
        cout: usize,
        layers: usize,
        slope: f32,
    ) -> Self {
        let win = Window::new((1, 3), (1, 2), (0, 1));
        let layers = (0..layers)
            .map(|i| {
                let a = if i == 0 { cin } else { hidden };
                let b = if i + 1 == layers { cout } else { hidden };
                ConvTranspose2d::new(rng, a, b, win, (0, 1))
            })
            .collect();
        Self { layers, slope }
    }

    pub fn in_channels(&self) -> usize {
        self.layers[0].in_channels()
    }

    pub fn out_channels(&self) -> usize {
        self.layers.last().expect("non-empty").out_channels()
    }

    pub fn upsample_factor(&self) -> usize {
        1 << self.layers.len()
    }

    pub fn forward(&self, x: &Tensor) -> (Tensor, SeqDecoderCache) {
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut h = x.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h);
            inputs.push(h);
            h = if i + 1 == self.layers.len() {
                pre
            } else {
                leaky_relu(&pre, self.slope)
            };
        }
        (h, SeqDecoderCache { inputs })
    }

    pub fn backward(&mut self, c: &SeqDecoderCache, dy: &Tensor, param_grads: bool) -> Tensor {
        let mut d = dy.clone();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                // the next layer's input is this layer's activation
                d = leaky_relu_backward(&c.inputs[i + 1], &d, self.slope);
            }
            d = self.layers[i].backward(&c.inputs[i], &d, param_grads);
        }
        d
    }
}

impl Module for SeqDecoder {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for (i, l) in self.layers.iter().enumerate() {
            l.visit_params(&join(prefix, &format!("layer{i}")), f);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.visit_params_mut(&join(prefix, &format!("layer{i}")), f);
        }
    }
}
