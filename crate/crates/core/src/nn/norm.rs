use super::{join, Mode, Module, Param, Tensor};

const EPS: f64 = 1e-5;
const MOMENTUM: f32 = 0.1;

/// Per-channel batch normalization over `(n, h, w)`.
#[derive(Clone, Debug)]
pub struct BatchNorm2d {
    pub gamma: Param,
    pub beta: Param,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
}

#[derive(Clone, Debug)]
pub struct BnCache {
    xhat: Tensor,
    inv_std: Vec<f32>,
    mode: Mode,
    batch_mean: Vec<f32>,
    batch_var_unbiased: Vec<f32>,
}

impl BatchNorm2d {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(Tensor::full(&[channels], 1.0)),
            beta: Param::new(Tensor::zeros(&[channels])),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.running_mean.len()
    }

    pub fn forward(&self, x: &Tensor, mode: Mode) -> (Tensor, BnCache) {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels(), "batch-norm channels");
        let plane = h * w;
        let count = n * plane;
        let mut mean = vec![0f32; c];
        let mut var_unbiased = vec![0f32; c];
        let mut inv_std = vec![0f32; c];
        for ch in 0..c {
            let (m, v) = match mode {
                Mode::Train => {
                    let mut sum = 0f64;
                    for s in 0..n {
                        sum += x.sample(s)[ch * plane..(ch + 1) * plane]
                            .iter()
                            .map(|&v| v as f64)
                            .sum::<f64>();
                    }
                    let m = sum / count as f64;
                    let mut sq = 0f64;
                    for s in 0..n {
                        sq += x.sample(s)[ch * plane..(ch + 1) * plane]
                            .iter()
                            .map(|&v| (v as f64 - m).powi(2))
                            .sum::<f64>();
                    }
                    var_unbiased[ch] = (sq / (count.max(2) - 1) as f64) as f32;
                    (m, sq / count as f64)
                }
                Mode::Eval => (self.running_mean[ch] as f64, self.running_var[ch] as f64),
            };
            mean[ch] = m as f32;
            inv_std[ch] = (1.0 / (v + EPS).sqrt()) as f32;
        }
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        let (g, b) = (self.gamma.value.data(), self.beta.value.data());
        for s in 0..n {
            let xs = x.sample(s);
            let xh = xhat.sample_mut(s);
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                for (o, &v) in xh[r.clone()].iter_mut().zip(&xs[r]) {
                    *o = (v - mean[ch]) * inv_std[ch];
                }
            }
            let ys = y.sample_mut(s);
            let xh = xhat.sample(s);
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                for (o, &v) in ys[r.clone()].iter_mut().zip(&xh[r]) {
                    *o = g[ch] * v + b[ch];
                }
            }
        }
        let cache = BnCache {
            xhat,
            inv_std,
            mode,
            batch_mean: mean,
            batch_var_unbiased: var_unbiased,
        };
        (y, cache)
    }

    /// Fold the batch statistics of a training-mode pass into the running statistics.
    pub fn commit_stats(&mut self, cache: &BnCache) {
        if cache.mode != Mode::Train {
            return;
        }
        for ch in 0..self.channels() {
            self.running_mean[ch] =
                (1.0 - MOMENTUM) * self.running_mean[ch] + MOMENTUM * cache.batch_mean[ch];
            self.running_var[ch] =
                (1.0 - MOMENTUM) * self.running_var[ch] + MOMENTUM * cache.batch_var_unbiased[ch];
        }
    }

    pub fn backward(&mut self, cache: &BnCache, dy: &Tensor, param_grads: bool) -> Tensor {
        let (n, c, h, w) = dy.dims4();
        let plane = h * w;
        let count = (n * plane) as f64;
        let g = self.gamma.value.data().to_vec();
        let mut sum_dy = vec![0f64; c];
        let mut sum_dy_xhat = vec![0f64; c];
        for s in 0..n {
            let d = dy.sample(s);
            let xh = cache.xhat.sample(s);
            for ch in 0..c {
                let r = ch * plane..(ch + 1) * plane;
                for (&a, &b) in d[r.clone()].iter().zip(&xh[r]) {
                    sum_dy[ch] += a as f64;
                    sum_dy_xhat[ch] += a as f64 * b as f64;
                }
            }
        }
        if param_grads {
            for ch in 0..c {
                self.gamma.grad.data_mut()[ch] += sum_dy_xhat[ch] as f32;
                self.beta.grad.data_mut()[ch] += sum_dy[ch] as f32;
            }
        }
        let mut dx = Tensor::zeros(dy.shape());
        for s in 0..n {
            let d = dy.sample(s);
            let xh = cache.xhat.sample(s);
            let out = dx.sample_mut(s);
            for ch in 0..c {
                let scale = g[ch] * cache.inv_std[ch];
                let r = ch * plane..(ch + 1) * plane;
                match cache.mode {
                    Mode::Train => {
                        let mdy = (sum_dy[ch] / count) as f32;
                        let mdyx = (sum_dy_xhat[ch] / count) as f32;
                        for ((o, &a), &b) in
                            out[r.clone()].iter_mut().zip(&d[r.clone()]).zip(&xh[r])
                        {
                            *o = scale * (a - mdy - b * mdyx);
                        }
                    }
                    Mode::Eval => {
                        for (o, &a) in out[r.clone()].iter_mut().zip(&d[r]) {
                            *o = scale * a;
                        }
                    }
                }
            }
        }
        dx
    }
}

impl Module for BatchNorm2d {
    fn visit_params(&self, prefix: &str, f: &mut dyn FnMut(String, &Param)) {
        f(join(prefix, "gamma"), &self.gamma);
        f(join(prefix, "beta"), &self.beta);
    }
    fn visit_params_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut Param)) {
        f(join(prefix, "gamma"), &mut self.gamma);
        f(join(prefix, "beta"), &mut self.beta);
    }
    fn visit_buffers(&self, prefix: &str, f: &mut dyn FnMut(String, &[f32])) {
        f(join(prefix, "running_mean"), &self.running_mean);
        f(join(prefix, "running_var"), &self.running_var);
    }
    fn visit_buffers_mut(&mut self, prefix: &str, f: &mut dyn FnMut(String, &mut [f32])) {
        f(join(prefix, "running_mean"), &mut self.running_mean);
        f(join(prefix, "running_var"), &mut self.running_var);
    }
}
