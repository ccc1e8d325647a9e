//! Layers with hand-written backward passes.
//!
//! A layer caches what its backward pass needs during `forward`; `infer`
//! takes `&self` and caches nothing, so frozen networks can be shared.

use rand::Rng;

use super::tensor::{gemm, Scalar, Tensor};

/// A named parameter tensor and its gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
    pub shape: Vec<usize>,
    /// Running statistics are stored as non-trainable params.
    pub trainable: bool,
}

impl<T: Scalar> Param<T> {
    pub fn new(shape: &[usize], value: Vec<T>, trainable: bool) -> Self {
        assert_eq!(shape.iter().product::<usize>(), value.len());
        let grad = if trainable { vec![T::zero(); value.len()] } else { Vec::new() };
        Param {
            value,
            grad,
            shape: shape.to_vec(),
            trainable,
        }
    }

    pub fn filled(shape: &[usize], v: T, trainable: bool) -> Self {
        Self::new(shape, vec![v; shape.iter().product()], trainable)
    }

    pub fn uniform(shape: &[usize], limit: f64, rng: &mut impl Rng) -> Self {
        let n = shape.iter().product();
        let value = (0..n).map(|_| T::of(rng.gen_range(-limit..limit))).collect();
        Self::new(shape, value, true)
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }
}

pub type ParamVisitor<'a, T> = dyn FnMut(&str, &mut Param<T>) + 'a;

pub trait Layer<T: Scalar>: Send + Sync {
    /// Training-mode forward pass; caches activations for `backward`.
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T>;
    /// Inference-mode forward pass.
    fn infer(&self, x: &Tensor<T>) -> Tensor<T>;
    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T>;
    fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<'_, T>);
    fn out_channels(&self) -> usize;
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// 2D convolution, square kernel, zero padding, no dilation.
pub struct Conv2d<T> {
    pub in_c: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub weight: Param<T>,
    pub bias: Option<Param<T>>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_c: usize,
        out_c: usize,
        kernel: usize,
        stride: usize,
        bias: bool,
        gain: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let pad = if kernel == 3 { 1 } else { 0 };
        let fan_in = (in_c * kernel * kernel) as f64;
        let limit = (gain / fan_in).sqrt();
        Conv2d {
            in_c,
            out_c,
            kernel,
            stride,
            pad,
            weight: Param::uniform(&[out_c, in_c, kernel, kernel], limit, rng),
            bias: bias.then(|| Param::filled(&[out_c], T::zero(), true)),
            input: None,
        }
    }

    fn out_hw(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kernel) / self.stride + 1,
            (w + 2 * self.pad - self.kernel) / self.stride + 1,
        )
    }

    fn is_pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1
    }

    fn im2col(&self, x: &[T], h: usize, w: usize, cols: &mut Vec<T>) {
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        cols.clear();
        cols.resize(self.in_c * k * k * oh * ow, T::zero());
        let mut row = 0;
        for c in 0..self.in_c {
            let plane = &x[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let dst = &mut cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        let out = &mut dst[oy * ow..(oy + 1) * ow];
                        for (ox, o) in out.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                *o = src[ix as usize];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn col2im(&self, cols: &[T], h: usize, w: usize, dx: &mut [T]) {
        let (oh, ow) = self.out_hw(h, w);
        let k = self.kernel;
        let mut row = 0;
        for c in 0..self.in_c {
            let plane = &mut dx[c * h * w..(c + 1) * h * w];
            for ky in 0..k {
                for kx in 0..k {
                    let src = &cols[row * oh * ow..(row + 1) * oh * ow];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] = dst[ix as usize] + src[oy * ow + ox];
                            }
                        }
                    }
                    row += 1;
                }
            }
        }
    }

    fn run(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_c, "conv input channels");
        let (oh, ow) = self.out_hw(x.h, x.w);
        let p = oh * ow;
        let kk = self.in_c * self.kernel * self.kernel;
        let mut y = Tensor::zeros(x.n, self.out_c, oh, ow);
        let mut cols = Vec::new();
        for i in 0..x.n {
            let src = if self.is_pointwise() {
                x.sample(i)
            } else {
                self.im2col(x.sample(i), x.h, x.w, &mut cols);
                &cols
            };
            let out = y.sample_mut(i);
            if let Some(b) = &self.bias {
                for (c, &bv) in b.value.iter().enumerate() {
                    out[c * p..(c + 1) * p].iter_mut().for_each(|v| *v = bv);
                }
            }
            let beta = if self.bias.is_some() { T::one() } else { T::zero() };
            gemm(false, false, self.out_c, p, kk, &self.weight.value, src, beta, out);
        }
        y
    }
}

impl<T: Scalar> Layer<T> for Conv2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.run(x);
        self.input = Some(x.clone());
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x)
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("conv backward without forward");
        let p = dy.plane();
        let kk = self.in_c * self.kernel * self.kernel;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut cols = Vec::new();
        let mut dcols = vec![T::zero(); kk * p];
        for i in 0..x.n {
            let g = dy.sample(i);
            if let Some(b) = &mut self.bias {
                for (c, gb) in b.grad.iter_mut().enumerate() {
                    *gb = *gb + g[c * p..(c + 1) * p].iter().copied().sum::<T>();
                }
            }
            if self.is_pointwise() {
                gemm(false, true, self.out_c, kk, p, g, x.sample(i), T::one(), &mut self.weight.grad);
                gemm(true, false, kk, p, self.out_c, &self.weight.value, g, T::zero(), dx.sample_mut(i));
            } else {
                self.im2col(x.sample(i), x.h, x.w, &mut cols);
                gemm(false, true, self.out_c, kk, p, g, &cols, T::one(), &mut self.weight.grad);
                gemm(true, false, kk, p, self.out_c, &self.weight.value, g, T::zero(), &mut dcols);
                self.col2im(&dcols, x.h, x.w, dx.sample_mut(i));
            }
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn out_channels(&self) -> usize {
        self.out_c
    }
}

/// Transposed convolution with a 2×2 kernel and stride 2: doubles H and W.
pub struct ConvTranspose2x2<T> {
    pub in_c: usize,
    pub out_c: usize,
    /// Layout `[in_c, out_c, 2, 2]`.
    pub weight: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> ConvTranspose2x2<T> {
    pub fn new(in_c: usize, out_c: usize, gain: f64, rng: &mut impl Rng) -> Self {
        let limit = (gain / in_c as f64).sqrt();
        ConvTranspose2x2 {
            in_c,
            out_c,
            weight: Param::uniform(&[in_c, out_c, 2, 2], limit, rng),
            input: None,
        }
    }

    fn run(&self, x: &Tensor<T>) -> Tensor<T> {
        assert_eq!(x.c, self.in_c, "transposed conv input channels");
        let p = x.plane();
        let (oh, ow) = (2 * x.h, 2 * x.w);
        let rows = self.out_c * 4;
        let mut y = Tensor::zeros(x.n, self.out_c, oh, ow);
        let mut cols = vec![T::zero(); rows * p];
        for i in 0..x.n {
            gemm(true, false, rows, p, self.in_c, &self.weight.value, x.sample(i), T::zero(), &mut cols);
            let out = y.sample_mut(i);
            for co in 0..self.out_c {
                for d in 0..4 {
                    let (dy, dx) = (d / 2, d % 2);
                    let src = &cols[(co * 4 + d) * p..(co * 4 + d + 1) * p];
                    for iy in 0..x.h {
                        let row = &mut out[co * oh * ow + (2 * iy + dy) * ow..];
                        for ix in 0..x.w {
                            row[2 * ix + dx] = src[iy * x.w + ix];
                        }
                    }
                }
            }
        }
        y
    }
}

impl<T: Scalar> Layer<T> for ConvTranspose2x2<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = self.run(x);
        self.input = Some(x.clone());
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        self.run(x)
    }

    fn backward(&mut self, g: &Tensor<T>) -> Tensor<T> {
        let x = self.input.take().expect("transposed conv backward without forward");
        let p = x.plane();
        let (oh, ow) = (g.h, g.w);
        let rows = self.out_c * 4;
        let mut dx = Tensor::zeros(x.n, x.c, x.h, x.w);
        let mut gcols = vec![T::zero(); rows * p];
        for i in 0..x.n {
            let gs = g.sample(i);
            for co in 0..self.out_c {
                for d in 0..4 {
                    let (dy, ddx) = (d / 2, d % 2);
                    let dst = &mut gcols[(co * 4 + d) * p..(co * 4 + d + 1) * p];
                    for iy in 0..x.h {
                        let row = &gs[co * oh * ow + (2 * iy + dy) * ow..];
                        for ix in 0..x.w {
                            dst[iy * x.w + ix] = row[2 * ix + ddx];
                        }
                    }
                }
            }
            // weight is [in_c, rows]; dW += X (in_c × p) · G^T (p × rows)
            gemm(false, true, self.in_c, rows, p, x.sample(i), &gcols, T::one(), &mut self.weight.grad);
            gemm(false, false, self.in_c, p, rows, &self.weight.value, &gcols, T::zero(), dx.sample_mut(i));
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        f(&join(prefix, "weight"), &mut self.weight);
    }

    fn out_channels(&self) -> usize {
        self.out_c
    }
}

/// Per-channel batch normalization over (N, H, W).
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Param<T>,
    pub running_var: Param<T>,
    /// Weight of the current batch in the running-statistics update.
    pub momentum: f64,
    pub eps: f64,
    cache: Option<(Tensor<T>, Vec<T>)>,
}

pub const BN_EPS: f64 = 1e-3;
pub const BN_MOMENTUM: f64 = 0.1;

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            channels,
            gamma: Param::filled(&[channels], T::one(), true),
            beta: Param::filled(&[channels], T::zero(), true),
            running_mean: Param::filled(&[channels], T::zero(), false),
            running_var: Param::filled(&[channels], T::one(), false),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
            cache: None,
        }
    }

    /// Per-channel biased batch mean and variance.
    pub fn batch_stats(x: &Tensor<T>) -> (Vec<f64>, Vec<f64>) {
        let p = x.plane();
        let m = (x.n * p) as f64;
        let mut mean = vec![0.0; x.c];
        let mut var = vec![0.0; x.c];
        for c in 0..x.c {
            let mut s = 0.0;
            for i in 0..x.n {
                s += x.sample(i)[c * p..(c + 1) * p].iter().map(|v| v.f64()).sum::<f64>();
            }
            let mu = s / m;
            let mut q = 0.0;
            for i in 0..x.n {
                q += x.sample(i)[c * p..(c + 1) * p]
                    .iter()
                    .map(|v| {
                        let d = v.f64() - mu;
                        d * d
                    })
                    .sum::<f64>();
            }
            mean[c] = mu;
            var[c] = q / m;
        }
        (mean, var)
    }

    fn normalize(&self, x: &Tensor<T>, mean: &[T], inv_std: &[T]) -> (Tensor<T>, Tensor<T>) {
        let p = x.plane();
        let mut xhat = x.clone();
        let mut y = x.clone();
        for i in 0..x.n {
            let xs = xhat.sample_mut(i);
            for c in 0..x.c {
                for v in &mut xs[c * p..(c + 1) * p] {
                    *v = (*v - mean[c]) * inv_std[c];
                }
            }
            let ys = y.sample_mut(i);
            let xs = xhat.sample(i);
            for c in 0..x.c {
                let (g, b) = (self.gamma.value[c], self.beta.value[c]);
                for (o, &v) in ys[c * p..(c + 1) * p].iter_mut().zip(&xs[c * p..(c + 1) * p]) {
                    *o = g * v + b;
                }
            }
        }
        (xhat, y)
    }

    fn inv_std(&self, var: impl Iterator<Item = f64>) -> Vec<T> {
        var.map(|v| T::of(1.0 / (v + self.eps).sqrt())).collect()
    }
}

impl<T: Scalar> Layer<T> for BatchNorm2d<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let (mean, var) = Self::batch_stats(x);
        let inv_std = self.inv_std(var.iter().copied());
        let mean_t: Vec<T> = mean.iter().map(|&v| T::of(v)).collect();
        let (xhat, y) = self.normalize(x, &mean_t, &inv_std);
        let m = self.momentum;
        for c in 0..self.channels {
            let rm = &mut self.running_mean.value[c];
            *rm = T::of((1.0 - m) * rm.f64() + m * mean[c]);
            let rv = &mut self.running_var.value[c];
            *rv = T::of((1.0 - m) * rv.f64() + m * var[c]);
        }
        self.cache = Some((xhat, inv_std));
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let inv_std = self.inv_std(self.running_var.value.iter().map(|v| v.f64()));
        let mean: Vec<T> = self.running_mean.value.iter().map(|v| T::of(v.f64())).collect();
        self.normalize(x, &mean, &inv_std).1
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let (xhat, inv_std) = self.cache.take().expect("batch norm backward without forward");
        let p = dy.plane();
        let m = (dy.n * p) as f64;
        let mut dx = Tensor::zeros(dy.n, dy.c, dy.h, dy.w);
        for c in 0..self.channels {
            let mut sum_dy = 0.0;
            let mut sum_dy_xhat = 0.0;
            for i in 0..dy.n {
                let g = &dy.sample(i)[c * p..(c + 1) * p];
                let xh = &xhat.sample(i)[c * p..(c + 1) * p];
                for (&a, &b) in g.iter().zip(xh) {
                    sum_dy += a.f64();
                    sum_dy_xhat += a.f64() * b.f64();
                }
            }
            self.beta.grad[c] = self.beta.grad[c] + T::of(sum_dy);
            self.gamma.grad[c] = self.gamma.grad[c] + T::of(sum_dy_xhat);
            let scale = self.gamma.value[c].f64() * inv_std[c].f64() / m;
            for i in 0..dy.n {
                let g = &dy.sample(i)[c * p..(c + 1) * p];
                let xh = &xhat.sample(i)[c * p..(c + 1) * p];
                let out = &mut dx.sample_mut(i)[c * p..(c + 1) * p];
                for ((o, &a), &b) in out.iter_mut().zip(g).zip(xh) {
                    *o = T::of(scale * (m * a.f64() - sum_dy - b.f64() * sum_dy_xhat));
                }
            }
        }
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
        f(&join(prefix, "running_mean"), &mut self.running_mean);
        f(&join(prefix, "running_var"), &mut self.running_var);
    }

    fn out_channels(&self) -> usize {
        self.channels
    }
}

#[derive(Default)]
pub struct Relu {
    channels: usize,
    mask: Option<Vec<bool>>,
}

impl Relu {
    pub fn new(channels: usize) -> Self {
        Relu { channels, mask: None }
    }
}

impl<T: Scalar> Layer<T> for Relu {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = <Self as Layer<T>>::infer(self, x);
        self.mask = Some(x.data.iter().map(|&v| v > T::zero()).collect());
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = v.max(T::zero()));
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mask = self.mask.take().expect("relu backward without forward");
        let mut dx = dy.clone();
        for (g, keep) in dx.data.iter_mut().zip(mask) {
            if !keep {
                *g = T::zero();
            }
        }
        dx
    }

    fn visit(&mut self, _prefix: &str, _f: &mut ParamVisitor<'_, T>) {}

    fn out_channels(&self) -> usize {
        self.channels
    }
}

#[derive(Default)]
pub struct Sigmoid {
    channels: usize,
    output: Option<Vec<f64>>,
}

impl Sigmoid {
    pub fn new(channels: usize) -> Self {
        Sigmoid { channels, output: None }
    }
}

fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

impl<T: Scalar> Layer<T> for Sigmoid {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let y = <Self as Layer<T>>::infer(self, x);
        self.output = Some(y.data.iter().map(|v| v.f64()).collect());
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut y = x.clone();
        y.data.iter_mut().for_each(|v| *v = T::of(sigmoid(v.f64())));
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let out = self.output.take().expect("sigmoid backward without forward");
        let mut dx = dy.clone();
        for (g, p) in dx.data.iter_mut().zip(out) {
            *g = T::of(g.f64() * p * (1.0 - p));
        }
        dx
    }

    fn visit(&mut self, _prefix: &str, _f: &mut ParamVisitor<'_, T>) {}

    fn out_channels(&self) -> usize {
        self.channels
    }
}

/// Layers applied in order.
pub struct Sequential<T> {
    pub layers: Vec<(String, Box<dyn Layer<T>>)>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new() -> Self {
        Sequential { layers: Vec::new() }
    }

    pub fn push(mut self, name: &str, layer: impl Layer<T> + 'static) -> Self {
        self.layers.push((name.to_string(), Box::new(layer)));
        self
    }

    /// Convolution followed by batch normalization and ReLU.
    pub fn conv_bn_relu(self, name: &str, conv: Conv2d<T>) -> Self {
        let c = conv.out_c;
        self.push(&format!("{name}.conv"), conv)
            .push(&format!("{name}.bn"), BatchNorm2d::new(c))
            .push(&format!("{name}.relu"), Relu::new(c))
    }

    pub fn up_bn_relu(self, name: &str, up: ConvTranspose2x2<T>) -> Self {
        let c = up.out_c;
        self.push(&format!("{name}.up"), up)
            .push(&format!("{name}.bn"), BatchNorm2d::new(c))
            .push(&format!("{name}.relu"), Relu::new(c))
    }
}

impl<T: Scalar> Default for Sequential<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut it = self.layers.iter_mut();
        let Some((_, first)) = it.next() else {
            return x.clone();
        };
        let mut y = first.forward(x);
        for (_, l) in it {
            y = l.forward(&y);
        }
        y
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut it = self.layers.iter();
        let Some((_, first)) = it.next() else {
            return x.clone();
        };
        let mut y = first.infer(x);
        for (_, l) in it {
            y = l.infer(&y);
        }
        y
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let mut g = dy.clone();
        for (_, l) in self.layers.iter_mut().rev() {
            g = l.backward(&g);
        }
        g
    }

    fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        for (name, l) in &mut self.layers {
            l.visit(&join(prefix, name), f);
        }
    }

    fn out_channels(&self) -> usize {
        self.layers.last().map(|(_, l)| l.out_channels()).unwrap_or(0)
    }
}

/// Two branches fed the same input, concatenated along channels and fused
/// by a 1×1 convolution.
pub struct DualBlock<T> {
    pub branch_a: Sequential<T>,
    pub branch_b: Sequential<T>,
    pub fuse: Sequential<T>,
}

impl<T: Scalar> Layer<T> for DualBlock<T> {
    fn forward(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let a = self.branch_a.forward(x);
        let b = self.branch_b.forward(x);
        self.fuse.forward(&Tensor::concat_channels(&a, &b))
    }

    fn infer(&self, x: &Tensor<T>) -> Tensor<T> {
        let a = self.branch_a.infer(x);
        let b = self.branch_b.infer(x);
        self.fuse.infer(&Tensor::concat_channels(&a, &b))
    }

    fn backward(&mut self, dy: &Tensor<T>) -> Tensor<T> {
        let g = self.fuse.backward(dy);
        let (ga, gb) = g.split_channels(self.branch_a.out_channels());
        let mut dx = self.branch_a.backward(&ga);
        dx.add_assign(&self.branch_b.backward(&gb));
        dx
    }

    fn visit(&mut self, prefix: &str, f: &mut ParamVisitor<'_, T>) {
        self.branch_a.visit(&join(prefix, "branch_a"), f);
        self.branch_b.visit(&join(prefix, "branch_b"), f);
        self.fuse.visit(&join(prefix, "fuse"), f);
    }

    fn out_channels(&self) -> usize {
        self.fuse.out_channels()
    }
}
