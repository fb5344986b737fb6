use rand::Rng;

use super::tensor::{gemm, Tensor};
use super::Param;

/// Geometry of a strided, zero-padded 2-D sliding window.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub pad: (usize, usize),
}

impl Window {
    pub fn new(kernel: (usize, usize), stride: (usize, usize), pad: (usize, usize)) -> Self {
        Self {
            kernel,
            stride,
            pad,
        }
    }

    /// Output extent of a convolution over an `h × w` input, `None` if the kernel does not fit.
    pub fn conv_out(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let ph = h + 2 * self.pad.0;
        let pw = w + 2 * self.pad.1;
        if ph < self.kernel.0 || pw < self.kernel.1 {
            return None;
        }
        Some((
            (ph - self.kernel.0) / self.stride.0 + 1,
            (pw - self.kernel.1) / self.stride.1 + 1,
        ))
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == (1, 1) && self.stride == (1, 1) && self.pad == (0, 0)
    }
}

/// Unfold a `(c, h, w)` image into `(c·kh·kw, ho·wo)` columns.
fn im2col(
    x: &[f32],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
    cols: &mut [f32],
) {
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.pad;
    let p = ho * wo;
    for ci in 0..c {
        let img = &x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let dst = &mut cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    let out = &mut dst[oy * wo..(oy + 1) * wo];
                    if iy < 0 || iy >= h as isize {
                        out.fill(0.0);
                        continue;
                    }
                    let src = &img[iy as usize * w..(iy as usize + 1) * w];
                    if sw == 1 {
                        // ix = ox + kj - pw, valid for ox in [lo, hi)
                        let lo = pw.saturating_sub(kj).min(wo);
                        let hi = (w + pw).saturating_sub(kj).min(wo).max(lo);
                        out[..lo].fill(0.0);
                        out[hi..].fill(0.0);
                        let start = lo + kj - pw;
                        out[lo..hi].copy_from_slice(&src[start..start + (hi - lo)]);
                    } else {
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * sw + kj) as isize - pw as isize;
                            *o = if ix < 0 || ix >= w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulate columns back into a `(c, h, w)` image.
fn col2im(
    cols: &[f32],
    c: usize,
    h: usize,
    w: usize,
    win: Window,
    ho: usize,
    wo: usize,
    x: &mut [f32],
) {
    let (kh, kw) = win.kernel;
    let (sh, sw) = win.stride;
    let (ph, pw) = win.pad;
    let p = ho * wo;
    for ci in 0..c {
        let img = &mut x[ci * h * w..(ci + 1) * h * w];
        for ki in 0..kh {
            for kj in 0..kw {
                let row = (ci * kh + ki) * kw + kj;
                let src = &cols[row * p..(row + 1) * p];
                for oy in 0..ho {
                    let iy = (oy * sh + ki) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut img[iy as usize * w..(iy as usize + 1) * w];
                    let row_src = &src[oy * wo..(oy + 1) * wo];
                    if sw == 1 {
                        let lo = pw.saturating_sub(kj).min(wo);
                        let hi = (w + pw).saturating_sub(kj).min(wo).max(lo);
                        let start = lo + kj - pw;
                        for (d, s) in dst[start..start + (hi - lo)]
                            .iter_mut()
                            .zip(&row_src[lo..hi])
                        {
                            *d += s;
                        }
                    } else {
                        for (ox, s) in row_src.iter().enumerate() {
                            let ix = (ox * sw + kj) as isize - pw as isize;
                            if ix >= 0 && (ix as usize) < w {
                                dst[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn uniform_init(rng: &mut impl Rng, shape: &[usize], fan_in: usize) -> Tensor {
    let bound = 1.0 / (fan_in as f32).sqrt();
    let len = shape.iter().product();
    Tensor::from_vec(
        shape,
        (0..len).map(|_| rng.gen_range(-bound..bound)).collect(),
    )
}

fn add_bias(y: &mut [f32], bias: &[f32], plane: usize) {
    for (co, b) in bias.iter().enumerate() {
        for v in &mut y[co * plane..(co + 1) * plane] {
            *v += b;
        }
    }
}

fn accumulate_bias_grad(dy: &[f32], grad: &mut [f32], plane: usize) {
    for (co, g) in grad.iter_mut().enumerate() {
        *g += dy[co * plane..(co + 1) * plane]
            .iter()
            .map(|&v| v as f64)
            .sum::<f64>() as f32;
    }
}

/// 2-D convolution, weight `(cout, cin, kh, kw)`.
#[derive(Clone, Debug)]
pub struct Conv2d {
    pub weight: Param,
    pub bias: Param,
    pub window: Window,
}

impl Conv2d {
    pub fn new(rng: &mut impl Rng, cin: usize, cout: usize, window: Window) -> Self {
        let fan_in = cin * window.kernel.0 * window.kernel.1;
        Self {
            weight: Param::new(uniform_init(
                rng,
                &[cout, cin, window.kernel.0, window.kernel.1],
                fan_in,
            )),
            bias: Param::new(uniform_init(rng, &[cout], fan_in)),
            window,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        self.window.conv_out(h, w)
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_channels(), "conv input channels");
        let (ho, wo) = self
            .window
            .conv_out(h, w)
            .expect("conv kernel larger than input");
        let cout = self.out_channels();
        let k = c * self.window.kernel.0 * self.window.kernel.1;
        let p = ho * wo;
        let mut y = Tensor::zeros(&[n, cout, ho, wo]);
        let mut cols = if self.window.is_pointwise() {
            Vec::new()
        } else {
            vec![0.0; k * p]
        };
        for s in 0..n {
            let xs = x.sample(s);
            let src: &[f32] = if self.window.is_pointwise() {
                xs
            } else {
                im2col(xs, c, h, w, self.window, ho, wo, &mut cols);
                &cols
            };
            let ys = y.sample_mut(s);
            gemm(
                cout,
                k,
                p,
                self.weight.value.data(),
                (k, 1),
                src,
                (p, 1),
                0.0,
                ys,
            );
            add_bias(ys, self.bias.value.data(), p);
        }
        y
    }

    /// Backpropagate `dy` given the forward input `x`. Parameter gradients
    /// accumulate only when `param_grads` is set.
    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, param_grads: bool) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (_, cout, ho, wo) = dy.dims4();
        let k = c * self.window.kernel.0 * self.window.kernel.1;
        let p = ho * wo;
        let pointwise = self.window.is_pointwise();
        let mut dx = Tensor::zeros(x.shape());
        let mut cols = if pointwise {
            Vec::new()
        } else {
            vec![0.0; k * p]
        };
        let mut dcols = vec![0.0; k * p];
        for s in 0..n {
            let dys = dy.sample(s);
            if param_grads {
                let src: &[f32] = if pointwise {
                    x.sample(s)
                } else {
                    im2col(x.sample(s), c, h, w, self.window, ho, wo, &mut cols);
                    &cols
                };
                gemm(
                    cout,
                    p,
                    k,
                    dys,
                    (p, 1),
                    src,
                    (1, p),
                    1.0,
                    self.weight.grad.data_mut(),
                );
                accumulate_bias_grad(dys, self.bias.grad.data_mut(), p);
            }
            if pointwise {
                gemm(
                    k,
                    cout,
                    p,
                    self.weight.value.data(),
                    (1, k),
                    dys,
                    (p, 1),
                    0.0,
                    dx.sample_mut(s),
                );
            } else {
                gemm(
                    k,
                    cout,
                    p,
                    self.weight.value.data(),
                    (1, k),
                    dys,
                    (p, 1),
                    0.0,
                    &mut dcols,
                );
                col2im(&dcols, c, h, w, self.window, ho, wo, dx.sample_mut(s));
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Param); 2] {
        [("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    pub fn params(&self) -> [(&'static str, &Param); 2] {
        [("weight", &self.weight), ("bias", &self.bias)]
    }
}

/// Transposed 2-D convolution, weight `(cin, cout, kh, kw)`.
#[derive(Clone, Debug)]
pub struct ConvTranspose2d {
    pub weight: Param,
    pub bias: Param,
    pub window: Window,
    pub output_padding: (usize, usize),
}

impl ConvTranspose2d {
    pub fn new(
        rng: &mut impl Rng,
        cin: usize,
        cout: usize,
        window: Window,
        output_padding: (usize, usize),
    ) -> Self {
        assert!(output_padding.0 < window.stride.0 && output_padding.1 < window.stride.1);
        let fan_in = cout * window.kernel.0 * window.kernel.1;
        Self {
            weight: Param::new(uniform_init(
                rng,
                &[cin, cout, window.kernel.0, window.kernel.1],
                fan_in,
            )),
            bias: Param::new(uniform_init(rng, &[cout], fan_in)),
            window,
            output_padding,
        }
    }

    pub fn in_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn output_dims(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        let (kh, kw) = self.window.kernel;
        let (sh, sw) = self.window.stride;
        let (ph, pw) = self.window.pad;
        let oh = ((h - 1) * sh + kh + self.output_padding.0).checked_sub(2 * ph)?;
        let ow = ((w - 1) * sw + kw + self.output_padding.1).checked_sub(2 * pw)?;
        Some((oh, ow))
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        let (n, cin, h, w) = x.dims4();
        assert_eq!(cin, self.in_channels(), "transposed conv input channels");
        let (oh, ow) = self.output_dims(h, w).expect("degenerate transposed conv");
        let cout = self.out_channels();
        let k = cout * self.window.kernel.0 * self.window.kernel.1;
        let p = h * w;
        let mut y = Tensor::zeros(&[n, cout, oh, ow]);
        let mut cols = vec![0.0; k * p];
        for s in 0..n {
            gemm(
                k,
                cin,
                p,
                self.weight.value.data(),
                (1, k),
                x.sample(s),
                (p, 1),
                0.0,
                &mut cols,
            );
            let ys = y.sample_mut(s);
            col2im(&cols, cout, oh, ow, self.window, h, w, ys);
            add_bias(ys, self.bias.value.data(), oh * ow);
        }
        y
    }

    pub fn backward(&mut self, x: &Tensor, dy: &Tensor, param_grads: bool) -> Tensor {
        let (n, cin, h, w) = x.dims4();
        let (_, cout, oh, ow) = dy.dims4();
        let k = cout * self.window.kernel.0 * self.window.kernel.1;
        let p = h * w;
        let mut dx = Tensor::zeros(x.shape());
        let mut dcols = vec![0.0; k * p];
        for s in 0..n {
            im2col(dy.sample(s), cout, oh, ow, self.window, h, w, &mut dcols);
            gemm(
                cin,
                k,
                p,
                self.weight.value.data(),
                (k, 1),
                &dcols,
                (p, 1),
                0.0,
                dx.sample_mut(s),
            );
            if param_grads {
                gemm(
                    cin,
                    p,
                    k,
                    x.sample(s),
                    (p, 1),
                    &dcols,
                    (1, p),
                    1.0,
                    self.weight.grad.data_mut(),
                );
                accumulate_bias_grad(dy.sample(s), self.bias.grad.data_mut(), oh * ow);
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> [(&'static str, &mut Param); 2] {
        [("weight", &mut self.weight), ("bias", &mut self.bias)]
    }

    pub fn params(&self) -> [(&'static str, &Param); 2] {
        [("weight", &self.weight), ("bias", &self.bias)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::testutil::{check_input_grad, check_param_grad, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(conv: &Conv2d, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let (ho, wo) = conv.output_dims(h, w).unwrap();
        let cout = conv.out_channels();
        let (kh, kw) = conv.window.kernel;
        let mut y = Tensor::zeros(&[n, cout, ho, wo]);
        let wt = conv.weight.value.data();
        for s in 0..n {
            for co in 0..cout {
                for oy in 0..ho {
                    for ox in 0..wo {
                        let mut acc = conv.bias.value.data()[co];
                        for ci in 0..c {
                            for ki in 0..kh {
                                for kj in 0..kw {
                                    let iy = (oy * conv.window.stride.0 + ki) as isize
                                        - conv.window.pad.0 as isize;
                                    let ix = (ox * conv.window.stride.1 + kj) as isize
                                        - conv.window.pad.1 as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w
                                    {
                                        acc += wt[((co * c + ci) * kh + ki) * kw + kj]
                                            * x.data()[((s * c + ci) * h + iy as usize) * w
                                                + ix as usize];
                                    }
                                }
                            }
                        }
                        y.data_mut()[((s * cout + co) * ho + oy) * wo + ox] = acc;
                    }
                }
            }
        }
        y
    }

    #[test]
    fn conv_matches_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (win, h, w) in [
            (Window::new((3, 3), (1, 1), (1, 1)), 5, 7),
            (Window::new((3, 3), (2, 2), (1, 1)), 8, 6),
            (Window::new((1, 1), (2, 2), (0, 0)), 6, 6),
            (Window::new((1, 3), (1, 1), (0, 1)), 1, 9),
        ] {
            let conv = Conv2d::new(&mut rng, 3, 4, win);
            let x = random_tensor(&mut rng, &[2, 3, h, w]);
            let got = conv.forward(&x);
            let want = naive_conv(&conv, &x);
            assert!(got.max_abs_diff(&want) < 1e-5, "{win:?}");
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut conv = Conv2d::new(&mut rng, 2, 3, Window::new((3, 3), (2, 2), (1, 1)));
        let x = random_tensor(&mut rng, &[2, 2, 6, 5]);
        check_input_grad(
            &x,
            |t| conv.forward(t),
            |t, dy| conv.clone().backward(t, dy, false),
        );
        check_param_grad(
            &mut conv,
            &x,
            |m| &mut m.weight,
            |m, t| m.forward(t),
            |m, t, dy| {
                m.backward(t, dy, true);
            },
        );
    }

    #[test]
    fn transposed_conv_doubles_extent_and_is_adjoint_of_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let win = Window::new((3, 3), (2, 2), (1, 1));
        let tconv = ConvTranspose2d::new(&mut rng, 3, 2, win, (1, 1));
        assert_eq!(tconv.output_dims(11, 39), Some((22, 78)));
        // <conv(u), v> == <u, convT(v)> for shared weights and zero bias
        let mut conv = Conv2d::new(&mut rng, 2, 3, win);
        conv.weight.value = tconv.weight.value.clone();
        conv.bias.value.fill(0.0);
        let mut t0 = tconv.clone();
        t0.bias.value.fill(0.0);
        let u = random_tensor(&mut rng, &[1, 2, 8, 10]);
        let v = random_tensor(&mut rng, &[1, 3, 4, 5]);
        let cu = conv.forward(&u);
        let tv = t0.forward(&v);
        let lhs: f64 = cu
            .data()
            .iter()
            .zip(v.data())
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        let rhs: f64 = u
            .data()
            .iter()
            .zip(tv.data())
            .map(|(a, b)| (*a as f64) * (*b as f64))
            .sum();
        assert!((lhs - rhs).abs() < 1e-4 * lhs.abs().max(1.0));
    }

    #[test]
    fn transposed_conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut tconv =
            ConvTranspose2d::new(&mut rng, 3, 2, Window::new((1, 3), (1, 2), (0, 1)), (0, 1));
        let x = random_tensor(&mut rng, &[2, 3, 1, 5]);
        check_input_grad(
            &x,
            |t| tconv.forward(t),
            |t, dy| tconv.clone().backward(t, dy, false),
        );
        check_param_grad(
            &mut tconv,
            &x,
            |m| &mut m.weight,
            |m, t| m.forward(t),
            |m, t, dy| {
                m.backward(t, dy, true);
            },
        );
    }
}
