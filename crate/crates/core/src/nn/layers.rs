//! Layer kernels with explicit forward caches and reverse-mode backward passes.

use super::gemm::{matmul, matmul_tn, transpose};
use super::tensor::{Scalar, Tensor};
use super::NnError;

/// Whether batch normalization uses batch statistics (and updates its running
/// estimates) or the stored running estimates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Trainable tensor paired with its gradient accumulator.
pub struct ParamRef<'a, T> {
    pub name: String,
    pub value: &'a mut Tensor<T>,
    pub grad: &'a mut Tensor<T>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvSpec {
    pub fn output_dims(&self, h: usize, w: usize) -> Result<(usize, usize), NnError> {
        let span_h = h + 2 * self.pad;
        let span_w = w + 2 * self.pad;
        if span_h < self.kernel || span_w < self.kernel {
            return Err(NnError::Dimension(format!(
                "{h}x{w} input too small for a {k}x{k} kernel with pad {p}",
                k = self.kernel,
                p = self.pad
            )));
        }
        Ok((
            (span_h - self.kernel) / self.stride + 1,
            (span_w - self.kernel) / self.stride + 1,
        ))
    }

    pub fn fan_in(&self) -> usize {
        self.in_ch * self.kernel * self.kernel
    }
}

struct ConvCache<T> {
    input_shape: [usize; 4],
    out_hw: (usize, usize),
    /// im2col matrix, `fan_in × (batch · out_h · out_w)`.
    cols: Vec<T>,
}

pub struct Conv2d<T> {
    pub spec: ConvSpec,
    /// `[out_ch, in_ch, k, k]`
    pub weight: Tensor<T>,
    /// `[1, out_ch, 1, 1]`
    pub bias: Tensor<T>,
    pub grad_weight: Tensor<T>,
    pub grad_bias: Tensor<T>,
    cache: Option<ConvCache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(spec: ConvSpec) -> Self {
        let wshape = [spec.out_ch, spec.in_ch, spec.kernel, spec.kernel];
        let bshape = [1, spec.out_ch, 1, 1];
        Self {
            spec,
            weight: Tensor::zeros(wshape),
            bias: Tensor::zeros(bshape),
            grad_weight: Tensor::zeros(wshape),
            grad_bias: Tensor::zeros(bshape),
            cache: None,
        }
    }

    fn im2col(&self, x: &Tensor<T>, oh: usize, ow: usize) -> Vec<T> {
        let ConvSpec {
            in_ch,
            kernel,
            stride,
            pad,
            ..
        } = self.spec;
        let [n, _, h, w] = x.shape();
        let plane = oh * ow;
        let cols_n = n * plane;
        let mut cols = vec![T::zero(); in_ch * kernel * kernel * cols_n];
        let xd = x.data();
        for ci in 0..in_ch {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let row = (ci * kernel + ky) * kernel + kx;
                    let dst_row = &mut cols[row * cols_n..(row + 1) * cols_n];
                    for b in 0..n {
                        let src = &xd[(b * in_ch + ci) * h * w..(b * in_ch + ci + 1) * h * w];
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            let src_row = &src[iy as usize * w..(iy as usize + 1) * w];
                            let dst = &mut dst_row[b * plane + oy * ow..b * plane + (oy + 1) * ow];
                            for (ox, d) in dst.iter_mut().enumerate() {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    *d = src_row[ix as usize];
                                }
                            }
                        }
                    }
                }
            }
        }
        cols
    }

    fn col2im(&self, cols: &[T], input_shape: [usize; 4], oh: usize, ow: usize) -> Tensor<T> {
        let ConvSpec {
            in_ch,
            kernel,
            stride,
            pad,
            ..
        } = self.spec;
        let [n, _, h, w] = input_shape;
        let plane = oh * ow;
        let cols_n = n * plane;
        let mut dx = Tensor::zeros(input_shape);
        let dxd = dx.data_mut();
        for ci in 0..in_ch {
            for ky in 0..kernel {
                for kx in 0..kernel {
                    let row = (ci * kernel + ky) * kernel + kx;
                    let src_row = &cols[row * cols_n..(row + 1) * cols_n];
                    for b in 0..n {
                        let base = (b * in_ch + ci) * h * w;
                        for oy in 0..oh {
                            let iy = (oy * stride + ky) as isize - pad as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for ox in 0..ow {
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if ix >= 0 && ix < w as isize {
                                    dxd[base + iy as usize * w + ix as usize] +=
                                        src_row[b * plane + oy * ow + ox];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(usize, usize), NnError> {
        if x.channels() != self.spec.in_ch {
            return Err(NnError::Dimension(format!(
                "conv expects {} input channels, got {}",
                self.spec.in_ch,
                x.channels()
            )));
        }
        self.spec.output_dims(x.height(), x.width())
    }

    fn apply(&self, x: &Tensor<T>, oh: usize, ow: usize, cols: &[T]) -> Tensor<T> {
        let n = x.batch();
        let co = self.spec.out_ch;
        let plane = oh * ow;
        let mut prod = vec![T::zero(); co * n * plane];
        matmul(co, n * plane, self.spec.fan_in(), self.weight.data(), cols, &mut prod);
        let mut y = Tensor::zeros([n, co, oh, ow]);
        let yd = y.data_mut();
        for c in 0..co {
            let bias = self.bias.data()[c];
            let src = &prod[c * n * plane..(c + 1) * n * plane];
            for b in 0..n {
                let dst = &mut yd[(b * co + c) * plane..(b * co + c + 1) * plane];
                for (d, &s) in dst.iter_mut().zip(&src[b * plane..(b + 1) * plane]) {
                    *d = s + bias;
                }
            }
        }
        y
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (oh, ow) = self.check_input(x)?;
        let cols = self.im2col(x, oh, ow);
        Ok(self.apply(x, oh, ow, &cols))
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (oh, ow) = self.check_input(x)?;
        let cols = self.im2col(x, oh, ow);
        let y = self.apply(x, oh, ow, &cols);
        self.cache = Some(ConvCache {
            input_shape: x.shape(),
            out_hw: (oh, ow),
            cols,
        });
        Ok(y)
    }

    /// Accumulates weight and bias gradients; returns the input gradient.
    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(NnError::State("conv backward called before forward"))?;
        let (oh, ow) = cache.out_hw;
        let n = cache.input_shape[0];
        let co = self.spec.out_ch;
        let fan_in = self.spec.fan_in();
        dy.expect_shape([n, co, oh, ow])?;
        let plane = oh * ow;
        let cols_n = n * plane;

        // dy as a `co × (batch · plane)` matrix.
        let mut dy_mat = vec![T::zero(); co * cols_n];
        for c in 0..co {
            for b in 0..n {
                dy_mat[c * cols_n + b * plane..c * cols_n + (b + 1) * plane]
                    .copy_from_slice(&dy.data()[(b * co + c) * plane..(b * co + c + 1) * plane]);
            }
        }

        let gb = self.grad_bias.data_mut();
        for c in 0..co {
            let mut s = T::zero();
            for &v in &dy_mat[c * cols_n..(c + 1) * cols_n] {
                s += v;
            }
            gb[c] += s;
        }

        let cols_t = transpose(fan_in, cols_n, &cache.cols);
        let mut gw = vec![T::zero(); co * fan_in];
        matmul(co, fan_in, cols_n, &dy_mat, &cols_t, &mut gw);
        for (g, d) in self.grad_weight.data_mut().iter_mut().zip(gw) {
            *g += d;
        }

        let mut dcols = vec![T::zero(); fan_in * cols_n];
        matmul_tn(fan_in, cols_n, co, self.weight.data(), &dy_mat, &mut dcols);
        let input_shape = cache.input_shape;
        Ok(self.col2im(&dcols, input_shape, oh, ow))
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: format!("{prefix}.weight"),
            value: &mut self.weight,
            grad: &mut self.grad_weight,
        });
        out.push(ParamRef {
            name: format!("{prefix}.bias"),
            value: &mut self.bias,
            grad: &mut self.grad_bias,
        });
    }

    fn zero_grad(&mut self) {
        self.grad_weight.data_mut().fill(T::zero());
        self.grad_bias.data_mut().fill(T::zero());
    }
}

struct BnCache<T> {
    mode: Mode,
    /// Normalized input, same shape as the input.
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub momentum: f64,
    pub epsilon: f64,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub grad_gamma: Tensor<T>,
    pub grad_beta: Tensor<T>,
    cache: Option<BnCache<T>>,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        let shape = [1, channels, 1, 1];
        Self {
            channels,
            momentum: BN_MOMENTUM,
            epsilon: BN_EPSILON,
            gamma: Tensor::filled(shape, T::one()),
            beta: Tensor::zeros(shape),
            running_mean: Tensor::zeros(shape),
            running_var: Tensor::filled(shape, T::one()),
            grad_gamma: Tensor::zeros(shape),
            grad_beta: Tensor::zeros(shape),
            cache: None,
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        if x.channels() != self.channels {
            return Err(NnError::Dimension(format!(
                "batch norm expects {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    /// Per-channel mean and biased variance over batch and spatial positions.
    fn batch_stats(x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
        let [n, c, _, _] = x.shape();
        let plane = x.plane_len();
        let count = (n * plane) as f64;
        let mut means = vec![0.0; c];
        let mut vars = vec![0.0; c];
        for ch in 0..c {
            let mut s = 0.0f64;
            for b in 0..n {
                for &v in &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                    s += v.as_f64();
                }
            }
            let mean = s / count;
            let mut ss = 0.0f64;
            for b in 0..n {
                for &v in &x.data()[(b * c + ch) * plane..(b * c + ch + 1) * plane] {
                    let d = v.as_f64() - mean;
                    ss += d * d;
                }
            }
            means[ch] = mean;
            vars[ch] = ss / count;
        }
        (means, vars)
    }

    fn normalize(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Tensor<T>) {
        let [n, c, _, _] = x.shape();
        let plane = x.plane_len();
        let mut xhat = Tensor::zeros(x.shape());
        let mut y = Tensor::zeros(x.shape());
        for b in 0..n {
            for ch in 0..c {
                let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                let (g, be) = (self.gamma.data()[ch], self.beta.data()[ch]);
                let src = &x.data()[range.clone()];
                let xh = &mut xhat.data_mut()[range.clone()];
                for (h, &v) in xh.iter_mut().zip(src) {
                    *h = (v - mean[ch]) * inv_std[ch];
                }
                let yd = &mut y.data_mut()[range.clone()];
                for (o, &h) in yd.iter_mut().zip(&xhat.data()[range.clone()]) {
                    *o = g * h + be;
                }
            }
        }
        (y, xhat)
    }

    fn eval_stats(&self) -> (Vec<T>, Vec<T>) {
        let mean = self.running_mean.data().to_vec();
        let inv_std = self
            .running_var
            .data()
            .iter()
            .map(|&v| T::of_f64(1.0 / (v.as_f64() + self.epsilon).sqrt()))
            .collect();
        (mean, inv_std)
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let (mean, inv_std) = self.eval_stats();
        Ok(self.normalize(x, &mean, &inv_std).0)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let (mean, inv_std) = match mode {
            Mode::Eval => self.eval_stats(),
            Mode::Train => {
                if x.batch() < 2 {
                    return Err(NnError::Dimension(format!(
                        "batch norm in train mode needs a batch of at least 2, got {}",
                        x.batch()
                    )));
                }
                let (means, vars) = Self::batch_stats(x);
                let count = (x.batch() * x.plane_len()) as f64;
                let m = self.momentum;
                for ch in 0..self.channels {
                    let rm = &mut self.running_mean.data_mut()[ch];
                    *rm = T::of_f64((1.0 - m) * rm.as_f64() + m * means[ch]);
                    let rv = &mut self.running_var.data_mut()[ch];
                    let unbiased = vars[ch] * count / (count - 1.0);
                    *rv = T::of_f64((1.0 - m) * rv.as_f64() + m * unbiased);
                }
                (
                    means.iter().map(|&v| T::of_f64(v)).collect(),
                    vars.iter()
                        .map(|&v| T::of_f64(1.0 / (v + self.epsilon).sqrt()))
                        .collect(),
                )
            }
        };
        let (y, xhat) = self.normalize(x, &mean, &inv_std);
        self.cache = Some(BnCache { mode, xhat, inv_std });
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let cache = self
            .cache
            .as_ref()
            .ok_or(NnError::State("batch norm backward called before forward"))?;
        dy.expect_shape(cache.xhat.shape())?;
        let [n, c, _, _] = dy.shape();
        let plane = dy.plane_len();
        let count = T::of_f64((n * plane) as f64);
        let mut dx = Tensor::zeros(dy.shape());
        for ch in 0..c {
            let mut sum_dy = T::zero();
            let mut sum_dy_xhat = T::zero();
            for b in 0..n {
                let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                for (&g, &h) in dy.data()[range.clone()].iter().zip(&cache.xhat.data()[range]) {
                    sum_dy += g;
                    sum_dy_xhat += g * h;
                }
            }
            self.grad_gamma.data_mut()[ch] += sum_dy_xhat;
            self.grad_beta.data_mut()[ch] += sum_dy;
            let gamma = self.gamma.data()[ch];
            let inv_std = cache.inv_std[ch];
            for b in 0..n {
                let range = (b * c + ch) * plane..(b * c + ch + 1) * plane;
                let xh = &cache.xhat.data()[range.clone()];
                let g = &dy.data()[range.clone()];
                let out = &mut dx.data_mut()[range];
                match cache.mode {
                    Mode::Eval => {
                        for (o, &gv) in out.iter_mut().zip(g) {
                            *o = gv * gamma * inv_std;
                        }
                    }
                    Mode::Train => {
                        // d/dx of gamma * (x - mean(x)) / std(x), batch statistics included.
                        let scale = gamma * inv_std / count;
                        for ((o, &gv), &h) in out.iter_mut().zip(g).zip(xh) {
                            *o = scale * (count * gv - sum_dy - h * sum_dy_xhat);
                        }
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    fn params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        out.push(ParamRef {
            name: format!("{prefix}.gamma"),
            value: &mut self.gamma,
            grad: &mut self.grad_gamma,
        });
        out.push(ParamRef {
            name: format!("{prefix}.beta"),
            value: &mut self.beta,
            grad: &mut self.grad_beta,
        });
    }

    fn zero_grad(&mut self) {
        self.grad_gamma.data_mut().fill(T::zero());
        self.grad_beta.data_mut().fill(T::zero());
    }
}

pub struct LeakyRelu<T> {
    pub slope: T,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> LeakyRelu<T> {
    pub fn new(slope: f64) -> Self {
        Self {
            slope: T::of_f64(slope),
            input: None,
        }
    }

    pub fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        for v in y.data_mut() {
            if *v < T::zero() {
                *v = *v * self.slope;
            }
        }
        y
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.infer(x);
        self.input = Some(x.clone());
        y
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let x = self
            .input
            .as_ref()
            .ok_or(NnError::State("leaky relu backward called before forward"))?;
        dy.expect_shape(x.shape())?;
        let mut dx = dy.clone();
        for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
            if v < T::zero() {
                *g = *g * self.slope;
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.input = None;
    }
}

/// Keeps the central `size × size` window of every plane.
pub struct CenterCrop {
    pub size: usize,
    input_shape: Option<[usize; 4]>,
}

impl CenterCrop {
    pub fn new(size: usize) -> Self {
        Self {
            size,
            input_shape: None,
        }
    }

    fn offsets(&self, shape: [usize; 4]) -> Result<(usize, usize), NnError> {
        let [_, _, h, w] = shape;
        if h < self.size || w < self.size {
            return Err(NnError::Dimension(format!(
                "cannot crop {h}x{w} to {0}x{0}",
                self.size
            )));
        }
        Ok(((h - self.size) / 2, (w - self.size) / 2))
    }

    pub fn infer<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let (oy, ox) = self.offsets(x.shape())?;
        let [n, c, _, _] = x.shape();
        let s = self.size;
        let mut y = Tensor::zeros([n, c, s, s]);
        for b in 0..n {
            for ch in 0..c {
                for r in 0..s {
                    for q in 0..s {
                        y.set(b, ch, r, q, x.get(b, ch, oy + r, ox + q));
                    }
                }
            }
        }
        Ok(y)
    }

    pub fn forward<T: Scalar>(&mut self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let y = self.infer(x)?;
        self.input_shape = Some(x.shape());
        Ok(y)
    }

    pub fn backward<T: Scalar>(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let shape = self
            .input_shape
            .ok_or(NnError::State("crop backward called before forward"))?;
        let [n, c, _, _] = shape;
        let s = self.size;
        dy.expect_shape([n, c, s, s])?;
        let (oy, ox) = self.offsets(shape)?;
        let mut dx = Tensor::zeros(shape);
        for b in 0..n {
            for ch in 0..c {
                for r in 0..s {
                    for q in 0..s {
                        dx.set(b, ch, oy + r, ox + q, dy.get(b, ch, r, q));
                    }
                }
            }
        }
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.input_shape = None;
    }
}

/// `y = F(x) + x` with `F = conv3x3 → BN → leaky ReLU → conv3x3 → BN` and no
/// activation after the sum.
pub struct ResidualBlock<T> {
    pub channels: usize,
    pub conv1: Conv2d<T>,
    pub bn1: BatchNorm2d<T>,
    pub act: LeakyRelu<T>,
    pub conv2: Conv2d<T>,
    pub bn2: BatchNorm2d<T>,
}

impl<T: Scalar> ResidualBlock<T> {
    pub fn new(channels: usize) -> Self {
        let spec = ConvSpec {
            in_ch: channels,
            out_ch: channels,
            kernel: 3,
            stride: 1,
            pad: 1,
        };
        Self {
            channels,
            conv1: Conv2d::new(spec),
            bn1: BatchNorm2d::new(channels),
            act: LeakyRelu::new(LEAKY_SLOPE),
            conv2: Conv2d::new(spec),
            bn2: BatchNorm2d::new(channels),
        }
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<(), NnError> {
        if x.channels() != self.channels {
            return Err(NnError::Dimension(format!(
                "residual block expects {} channels, got {}",
                self.channels,
                x.channels()
            )));
        }
        Ok(())
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let h = self.conv1.infer(x)?;
        let h = self.bn1.infer(&h)?;
        let h = self.act.infer(&h);
        let h = self.conv2.infer(&h)?;
        let mut y = self.bn2.infer(&h)?;
        y.add_assign(x)?;
        Ok(y)
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        self.check_input(x)?;
        let h = self.conv1.forward(x)?;
        let h = self.bn1.forward(&h, mode)?;
        let h = self.act.forward(&h);
        let h = self.conv2.forward(&h)?;
        let mut y = self.bn2.forward(&h, mode)?;
        y.add_assign(x)?;
        Ok(y)
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        let g = self.bn2.backward(dy)?;
        let g = self.conv2.backward(&g)?;
        let g = self.act.backward(&g)?;
        let g = self.bn1.backward(&g)?;
        let mut dx = self.conv1.backward(&g)?;
        // Skip path: the upstream gradient passes through unchanged.
        dx.add_assign(dy)?;
        Ok(dx)
    }

    pub fn clear_cache(&mut self) {
        self.conv1.clear_cache();
        self.bn1.clear_cache();
        self.act.clear_cache();
        self.conv2.clear_cache();
        self.bn2.clear_cache();
    }

    fn params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        self.conv1.params(&format!("{prefix}.conv1"), out);
        self.bn1.params(&format!("{prefix}.bn1"), out);
        self.conv2.params(&format!("{prefix}.conv2"), out);
        self.bn2.params(&format!("{prefix}.bn2"), out);
    }

    fn zero_grad(&mut self) {
        self.conv1.zero_grad();
        self.bn1.zero_grad();
        self.conv2.zero_grad();
        self.bn2.zero_grad();
    }
}

/// Declarative description of one layer of a sequential network.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LayerSpec {
    Conv(ConvSpec),
    BatchNorm { channels: usize },
    LeakyRelu { slope: f64 },
    ResBlock { channels: usize },
    CenterCrop { size: usize },
}

pub enum Layer<T> {
    Conv(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    LeakyRelu(LeakyRelu<T>),
    Residual(ResidualBlock<T>),
    Crop(CenterCrop),
}

impl<T: Scalar> Layer<T> {
    pub fn from_spec(spec: &LayerSpec) -> Result<Self, NnError> {
        Ok(match *spec {
            LayerSpec::Conv(c) => {
                if c.kernel != 1 && c.kernel != 3 {
                    return Err(NnError::Config(format!("unsupported kernel size {}", c.kernel)));
                }
                if c.stride != 1 && c.stride != 3 {
                    return Err(NnError::Config(format!("unsupported stride {}", c.stride)));
                }
                if c.in_ch == 0 || c.out_ch == 0 {
                    return Err(NnError::Config("conv with zero channels".into()));
                }
                Layer::Conv(Conv2d::new(c))
            }
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm2d::new(channels)),
            LayerSpec::LeakyRelu { slope } => Layer::LeakyRelu(LeakyRelu::new(slope)),
            LayerSpec::ResBlock { channels } => Layer::Residual(ResidualBlock::new(channels)),
            LayerSpec::CenterCrop { size } => {
                if size == 0 {
                    return Err(NnError::Config("crop to zero size".into()));
                }
                Layer::Crop(CenterCrop::new(size))
            }
        })
    }

    pub fn infer(&self, x: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(l) => l.infer(x),
            Layer::BatchNorm(l) => l.infer(x),
            Layer::LeakyRelu(l) => Ok(l.infer(x)),
            Layer::Residual(l) => l.infer(x),
            Layer::Crop(l) => l.infer(x),
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(l) => l.forward(x),
            Layer::BatchNorm(l) => l.forward(x, mode),
            Layer::LeakyRelu(l) => Ok(l.forward(x)),
            Layer::Residual(l) => l.forward(x, mode),
            Layer::Crop(l) => l.forward(x),
        }
    }

    pub fn backward(&mut self, dy: &Tensor<T>) -> Result<Tensor<T>, NnError> {
        match self {
            Layer::Conv(l) => l.backward(dy),
            Layer::BatchNorm(l) => l.backward(dy),
            Layer::LeakyRelu(l) => l.backward(dy),
            Layer::Residual(l) => l.backward(dy),
            Layer::Crop(l) => l.backward(dy),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            Layer::Conv(l) => l.clear_cache(),
            Layer::BatchNorm(l) => l.clear_cache(),
            Layer::LeakyRelu(l) => l.clear_cache(),
            Layer::Residual(l) => l.clear_cache(),
            Layer::Crop(l) => l.clear_cache(),
        }
    }

    pub fn params<'a>(&'a mut self, prefix: &str, out: &mut Vec<ParamRef<'a, T>>) {
        match self {
            Layer::Conv(l) => l.params(prefix, out),
            Layer::BatchNorm(l) => l.params(prefix, out),
            Layer::LeakyRelu(_) | Layer::Crop(_) => {}
            Layer::Residual(l) => l.params(prefix, out),
        }
    }

    pub fn zero_grad(&mut self) {
        match self {
            Layer::Conv(l) => l.zero_grad(),
            Layer::BatchNorm(l) => l.zero_grad(),
            Layer::LeakyRelu(_) | Layer::Crop(_) => {}
            Layer::Residual(l) => l.zero_grad(),
        }
    }

    /// Persistent tensors: parameters plus batch-norm running statistics.
    pub fn state<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
        fn conv<'a, T>(c: &'a mut Conv2d<T>, prefix: &str, out: &mut Vec<(String, &'a mut Tensor<T>)>) {
            out.push((format!("{prefix}.weight"), &mut c.weight));
            out.push((format!("{prefix}.bias"), &mut c.bias));
        }
        fn bn<'a, T>(
            b: &'a mut BatchNorm2d<T>,
            prefix: &str,
            out: &mut Vec<(String, &'a mut Tensor<T>)>,
        ) {
            out.push((format!("{prefix}.gamma"), &mut b.gamma));
            out.push((format!("{prefix}.beta"), &mut b.beta));
            out.push((format!("{prefix}.running_mean"), &mut b.running_mean));
            out.push((format!("{prefix}.running_var"), &mut b.running_var));
        }
        match self {
            Layer::Conv(c) => conv(c, prefix, out),
            Layer::BatchNorm(b) => bn(b, prefix, out),
            Layer::Residual(r) => {
                conv(&mut r.conv1, &format!("{prefix}.conv1"), out);
                bn(&mut r.bn1, &format!("{prefix}.bn1"), out);
                conv(&mut r.conv2, &format!("{prefix}.conv2"), out);
                bn(&mut r.bn2, &format!("{prefix}.bn2"), out);
            }
            Layer::LeakyRelu(_) | Layer::Crop(_) => {}
        }
    }
}
