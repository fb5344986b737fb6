//! Minimal CPU tensor layers with explicit forward/backward passes.
//!
//! Every layer exposes `forward(&self, ..)` returning its output (plus
//! whatever it must remember) and `backward(&mut self, ..)` which returns the
//! input gradient and, when asked, accumulates parameter gradients into
//! [`Param::grad`]. Callers decide which parameters are stepped afterwards,
//! which is how the training procedures route gradients per module.

mod conv;
mod norm;
mod tensor;

pub use conv::{Conv2d, ConvTranspose2d, Window};
pub use norm::{BatchNorm2d, BnCache};
pub use tensor::Tensor;

/// A trainable tensor with its gradient accumulator and momentum buffers.
#[derive(Clone, Debug)]
pub struct Param {
    pub value: Tensor,
    pub grad: Tensor,
    /// Momentum of the primary optimizer.
    pub velocity: Tensor,
    /// Momentum of a second optimizer that updates the same tensor.
    pub alt_velocity: Tensor,
}

impl Param {
    pub fn new(value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        let velocity = Tensor::zeros(value.shape());
        let alt_velocity = Tensor::zeros(value.shape());
        Self {
            value,
            grad,
            velocity,
            alt_velocity,
        }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Batch-norm behaviour for a forward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    /// Normalize with batch statistics (running statistics are committed separately).
    Train,
    /// Normalize with running statistics.
    Eval,
}

pub fn leaky_relu(x: &Tensor, slope: f32) -> Tensor {
    x.map(|v| if v > 0.0 { v } else { v * slope })
}

/// Gradient of leaky ReLU given its forward input.
pub fn leaky_relu_backward(x: &Tensor, dy: &Tensor, slope: f32) -> Tensor {
    assert_eq!(x.shape(), dy.shape());
    let data = x
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&v, &g)| if v > 0.0 { g } else { g * slope })
        .collect();
    Tensor::from_vec(dy.shape(), data)
}

/// Concatenate two NCHW tensors along channels.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Tensor {
    let (n, ca, h, w) = a.dims4();
    let (nb, cb, hb, wb) = b.dims4();
    assert_eq!((n, h, w), (nb, hb, wb), "concat spatial mismatch");
    let mut out = Tensor::zeros(&[n, ca + cb, h, w]);
    for s in 0..n {
        let dst = out.sample_mut(s);
        dst[..ca * h * w].copy_from_slice(a.sample(s));
        dst[ca * h * w..].copy_from_slice(b.sample(s));
    }
    out
}

/// Split an NCHW gradient into its first `ca` channels and the rest.
pub fn split_channels(x: &Tensor, ca: usize) -> (Tensor, Tensor) {
    let (n, c, h, w) = x.dims4();
    let cb = c - ca;
    let mut a = Tensor::zeros(&[n, ca, h, w]);
    let mut b = Tensor::zeros(&[n, cb, h, w]);
    for s in 0..n {
        let src = x.sample(s);
        a.sample_mut(s).copy_from_slice(&src[..ca * h * w]);
        b.sample_mut(s).copy_from_slice(&src[ca * h * w..]);
    }
    (a, b)
}

/// Visitor over the named parameters and buffers of a network component.
pub trait Module {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param));
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param));
    /// Non-trainable state (batch-norm running statistics).
    fn visit_buffers(&self, _prefix: &str, _f: &mut dyn FnMut(String, &[f32])) {}
    fn visit_buffers_mut(&mut self, _prefix: &str, _f: &mut dyn FnMut(String, &mut [f32])) {}

    fn zero_grad(&mut self) {
        self.visit_params_mut("", &mut |_, p| p.zero_grad());
    }

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit_params("", &mut |_, p| n += p.value.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

impl Module for Conv2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for (name, p) in self.params() {
            f(join(prefix, name), p);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (name, p) in self.params_mut() {
            f(join(prefix, name), p);
        }
    }
}

impl Module for ConvTranspose2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        for (name, p) in self.params() {
            f(join(prefix, name), p);
        }
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        for (name, p) in self.params_mut() {
            f(join(prefix, name), p);
        }
    }
}


#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn concat_then_split_restores_parts() {
        let a = Tensor::from_vec(&[2, 1, 1, 2], vec![1.0, 2.0, 3.0, 4.0]);
        let b = Tensor::from_vec(&[2, 2, 1, 2], (0..8).map(|v| v as f32 * 10.0).collect());
        let c = concat_channels(&a, &b);
        assert_eq!(c.shape(), &[2, 3, 1, 2]);
        assert_eq!(c.sample(1), &[3.0, 4.0, 40.0, 50.0, 60.0, 70.0]);
        let (a2, b2) = split_channels(&c, 1);
        assert_eq!(a2, a);
        assert_eq!(b2, b);
    }

    #[test]
    fn leaky_relu_gradient_uses_slope_below_zero() {
        let x = Tensor::from_vec(&[3], vec![-2.0, 0.5, 0.0]);
        let dy = Tensor::from_vec(&[3], vec![1.0, 1.0, 1.0]);
        assert_eq!(leaky_relu(&x, 0.01).data(), &[-0.02, 0.5, 0.0]);
        assert_eq!(
            leaky_relu_backward(&x, &dy, 0.01).data(),
            &[0.01, 1.0, 0.01]
        );
    }
}
