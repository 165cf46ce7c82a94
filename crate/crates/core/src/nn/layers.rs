use std::borrow::Cow;

use rand::Rng;

use super::real::{matmul, MatRef};
use super::{Real, Tensor4};

/// A trainable buffer together with its accumulated gradient.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<T> {
    pub value: Vec<T>,
    pub grad: Vec<T>,
}

impl<T: Real> Param<T> {
    pub fn new(value: Vec<T>) -> Self {
        let grad = vec![T::zero(); value.len()];
        Self { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }
}

/// Uniform `[-bound, bound]` initialization, drawn in `f64` so both element
/// types see the same sequence under a given seed.
pub fn uniform<T: Real, R: Rng + ?Sized>(rng: &mut R, len: usize, bound: f64) -> Vec<T> {
    (0..len)
        .map(|_| T::lit(rng.gen_range(-bound..=bound)))
        .collect()
}

/// Whether normalization layers use batch statistics (and update their
/// running estimates) or the frozen running statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// A sliding-window correspondence between a large grid and a small grid.
///
/// For a strided convolution the input is the large grid and the output the
/// small one; a transposed convolution runs the same correspondence backwards.
#[derive(Clone, Copy, Debug)]
struct Window {
    channels: usize,
    batch: usize,
    big_h: usize,
    big_w: usize,
    small_h: usize,
    small_w: usize,
    k: usize,
    stride: usize,
    pad: usize,
}

impl Window {
    fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    fn cols(&self) -> usize {
        self.batch * self.small_h * self.small_w
    }

    /// Large-grid coordinate touched by small-grid position `o` and tap `t`.
    #[inline]
    fn source(&self, o: usize, t: usize, limit: usize) -> Option<usize> {
        let pos = (o * self.stride + t) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }
}

fn im2col<T: Real>(big: &[T], w: &Window) -> Vec<T> {
    let ncols = w.cols();
    let mut cols = vec![T::zero(); w.rows() * ncols];
    for c in 0..w.channels {
        for ki in 0..w.k {
            for kj in 0..w.k {
                let row = (c * w.k + ki) * w.k + kj;
                let out = &mut cols[row * ncols..(row + 1) * ncols];
                for n in 0..w.batch {
                    let base = (c * w.batch + n) * w.big_h * w.big_w;
                    for oy in 0..w.small_h {
                        let Some(iy) = w.source(oy, ki, w.big_h) else {
                            continue;
                        };
                        let dst = (n * w.small_h + oy) * w.small_w;
                        for ox in 0..w.small_w {
                            if let Some(ix) = w.source(ox, kj, w.big_w) {
                                out[dst + ox] = big[base + iy * w.big_w + ix];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im<T: Real>(cols: &[T], w: &Window) -> Vec<T> {
    let ncols = w.cols();
    let mut big = vec![T::zero(); w.channels * w.batch * w.big_h * w.big_w];
    for c in 0..w.channels {
        for ki in 0..w.k {
            for kj in 0..w.k {
                let row = (c * w.k + ki) * w.k + kj;
                let src = &cols[row * ncols..(row + 1) * ncols];
                for n in 0..w.batch {
                    let base = (c * w.batch + n) * w.big_h * w.big_w;
                    for oy in 0..w.small_h {
                        let Some(iy) = w.source(oy, ki, w.big_h) else {
                            continue;
                        };
                        let s = (n * w.small_h + oy) * w.small_w;
                        for ox in 0..w.small_w {
                            if let Some(ix) = w.source(ox, kj, w.big_w) {
                                big[base + iy * w.big_w + ix] += src[s + ox];
                            }
                        }
                    }
                }
            }
        }
    }
    big
}

fn add_bias<T: Real>(y: &mut Tensor4<T>, bias: &[T]) {
    for (c, &b) in bias.iter().enumerate() {
        y.channel_mut(c).iter_mut().for_each(|v| *v += b);
    }
}

fn accumulate_bias_grad<T: Real>(grad: &mut [T], dy: &Tensor4<T>) {
    for (c, g) in grad.iter_mut().enumerate() {
        *g += dy.channel(c).iter().copied().sum();
    }
}

/// Input of a convolution, kept for the backward pass.
#[derive(Clone, Debug)]
pub struct ConvCache<T> {
    input: Tensor4<T>,
}

impl<T> ConvCache<T> {
    pub fn input(&self) -> &Tensor4<T> {
        &self.input
    }
}

/// 2-D convolution with square kernels; weights are `[out][in·k·k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> Conv2d<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(uniform(rng, out_channels * fan_in, bound)),
            bias: Param::new(uniform(rng, out_channels, bound)),
        }
    }

    pub fn zeroed(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let fan_in = in_channels * kernel * kernel;
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(vec![T::zero(); out_channels * fan_in]),
            bias: Param::new(vec![T::zero(); out_channels]),
        }
    }

    pub fn output_side(&self, side: usize) -> usize {
        (side + 2 * self.padding - self.kernel) / self.stride + 1
    }

    fn window(&self, x: &Tensor4<T>) -> Window {
        Window {
            channels: self.in_channels,
            batch: x.batch(),
            big_h: x.height(),
            big_w: x.width(),
            small_h: self.output_side(x.height()),
            small_w: self.output_side(x.width()),
            k: self.kernel,
            stride: self.stride,
            pad: self.padding,
        }
    }

    fn pointwise(&self) -> bool {
        self.kernel == 1 && self.stride == 1 && self.padding == 0
    }

    fn columns<'a>(&self, x: &'a Tensor4<T>, w: &Window) -> Cow<'a, [T]> {
        if self.pointwise() {
            Cow::Borrowed(x.data())
        } else {
            Cow::Owned(im2col(x.data(), w))
        }
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Tensor4<T> {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let w = self.window(x);
        let cols = self.columns(x, &w);
        let mut y = Tensor4::zeros(self.out_channels, w.batch, w.small_h, w.small_w);
        matmul(
            T::one(),
            MatRef::new(&self.weight.value, self.out_channels, w.rows()),
            MatRef::new(&cols, w.rows(), w.cols()),
            T::zero(),
            y.data_mut(),
        );
        add_bias(&mut y, &self.bias.value);
        y
    }

    pub fn forward(&self, x: &Tensor4<T>) -> (Tensor4<T>, ConvCache<T>) {
        (self.apply(x), ConvCache { input: x.clone() })
    }

    /// Accumulates parameter gradients and returns the input gradient.
    pub fn backward(&mut self, cache: &ConvCache<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        let x = &cache.input;
        let w = self.window(x);
        let cols = self.columns(x, &w);
        let dy_mat = MatRef::new(dy.data(), self.out_channels, w.cols());
        matmul(
            T::one(),
            dy_mat,
            MatRef::new(&cols, w.rows(), w.cols()).t(),
            T::one(),
            &mut self.weight.grad,
        );
        accumulate_bias_grad(&mut self.bias.grad, dy);

        let mut dcols = vec![T::zero(); w.rows() * w.cols()];
        matmul(
            T::one(),
            MatRef::new(&self.weight.value, self.out_channels, w.rows()).t(),
            dy_mat,
            T::zero(),
            &mut dcols,
        );
        let dx = if self.pointwise() {
            dcols
        } else {
            col2im(&dcols, &w)
        };
        Tensor4::from_vec(x.channels(), x.batch(), x.height(), x.width(), dx)
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
}

/// 2-D transposed convolution; weights are `[in][out·k·k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvTranspose2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Param<T>,
    pub bias: Param<T>,
}

impl<T: Real> ConvTranspose2d<T> {
    pub fn new<R: Rng + ?Sized>(
        rng: &mut R,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        let bound = 1.0 / ((in_channels * kernel * kernel) as f64).sqrt();
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(uniform(
                rng,
                in_channels * out_channels * kernel * kernel,
                bound,
            )),
            bias: Param::new(uniform(rng, out_channels, bound)),
        }
    }

    pub fn zeroed(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel,
            stride,
            padding,
            weight: Param::new(vec![
                T::zero();
                in_channels * out_channels * kernel * kernel
            ]),
            bias: Param::new(vec![T::zero(); out_channels]),
        }
    }

    pub fn output_side(&self, side: usize) -> usize {
        (side - 1) * self.stride + self.kernel - 2 * self.padding
    }

    fn window(&self, x: &Tensor4<T>) -> Window {
        Window {
            channels: self.out_channels,
            batch: x.batch(),
            big_h: self.output_side(x.height()),
            big_w: self.output_side(x.width()),
            small_h: x.height(),
            small_w: x.width(),
            k: self.kernel,
            stride: self.stride,
            pad: self.padding,
        }
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Tensor4<T> {
        assert_eq!(
            x.channels(),
            self.in_channels,
            "transposed conv input channels"
        );
        let w = self.window(x);
        let mut cols = vec![T::zero(); w.rows() * w.cols()];
        matmul(
            T::one(),
            MatRef::new(&self.weight.value, self.in_channels, w.rows()).t(),
            MatRef::new(x.data(), self.in_channels, w.cols()),
            T::zero(),
            &mut cols,
        );
        let mut y = Tensor4::from_vec(
            self.out_channels,
            w.batch,
            w.big_h,
            w.big_w,
            col2im(&cols, &w),
        );
        add_bias(&mut y, &self.bias.value);
        y
    }

    pub fn forward(&self, x: &Tensor4<T>) -> (Tensor4<T>, ConvCache<T>) {
        (self.apply(x), ConvCache { input: x.clone() })
    }

    pub fn backward(&mut self, cache: &ConvCache<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        let x = &cache.input;
        let w = self.window(x);
        let dcols = im2col(dy.data(), &w);
        let dcols_mat = MatRef::new(&dcols, w.rows(), w.cols());
        matmul(
            T::one(),
            MatRef::new(x.data(), self.in_channels, w.cols()),
            dcols_mat.t(),
            T::one(),
            &mut self.weight.grad,
        );
        accumulate_bias_grad(&mut self.bias.grad, dy);

        let mut dx = Tensor4::zeros(x.channels(), x.batch(), x.height(), x.width());
        matmul(
            T::one(),
            MatRef::new(&self.weight.value, self.in_channels, w.rows()),
            dcols_mat,
            T::zero(),
            dx.data_mut(),
        );
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct NormCache<T> {
    normalized: Tensor4<T>,
    inv_std: Vec<T>,
    mode: Mode,
}

/// Per-channel batch normalization over `(sample, row, col)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub eps: f64,
    pub momentum: f64,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Param::new(vec![T::one(); channels]),
            beta: Param::new(vec![T::zero(); channels]),
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn forward(&mut self, x: &Tensor4<T>, mode: Mode) -> (Tensor4<T>, NormCache<T>) {
        assert_eq!(x.channels(), self.channels(), "batch norm channels");
        let count = x.plane();
        let mut normalized = Tensor4::zeros(x.channels(), x.batch(), x.height(), x.width());
        let mut inv_std = Vec::with_capacity(self.channels());
        for c in 0..self.channels() {
            let values = x.channel(c);
            let (mean, var) = match mode {
                Mode::Train => {
                    let mean =
                        values.iter().map(|v| v.to_f64().unwrap()).sum::<f64>() / count as f64;
                    let var = values
                        .iter()
                        .map(|v| {
                            let d = v.to_f64().unwrap() - mean;
                            d * d
                        })
                        .sum::<f64>()
                        / count as f64;
                    let unbiased = if count > 1 {
                        var * count as f64 / (count - 1) as f64
                    } else {
                        var
                    };
                    let m = self.momentum;
                    self.running_mean[c] =
                        T::lit((1.0 - m) * self.running_mean[c].to_f64().unwrap() + m * mean);
                    self.running_var[c] =
                        T::lit((1.0 - m) * self.running_var[c].to_f64().unwrap() + m * unbiased);
                    (mean, var)
                }
                Mode::Eval => (
                    self.running_mean[c].to_f64().unwrap(),
                    self.running_var[c].to_f64().unwrap(),
                ),
            };
            let istd = 1.0 / (var + self.eps).sqrt();
            let (mean_t, istd_t) = (T::lit(mean), T::lit(istd));
            for (o, &v) in normalized.channel_mut(c).iter_mut().zip(values) {
                *o = (v - mean_t) * istd_t;
            }
            inv_std.push(istd_t);
        }
        let mut y = normalized.clone();
        for c in 0..self.channels() {
            let (g, b) = (self.gamma.value[c], self.beta.value[c]);
            y.channel_mut(c).iter_mut().for_each(|v| *v = *v * g + b);
        }
        (
            y,
            NormCache {
                normalized,
                inv_std,
                mode,
            },
        )
    }

    /// Inference-mode forward that leaves the running statistics untouched.
    pub fn apply(&self, x: &Tensor4<T>) -> Tensor4<T> {
        assert_eq!(x.channels(), self.channels(), "batch norm channels");
        let mut y = x.clone();
        for c in 0..self.channels() {
            let istd = T::lit(1.0 / (self.running_var[c].to_f64().unwrap() + self.eps).sqrt());
            let scale = self.gamma.value[c] * istd;
            let shift = self.beta.value[c] - self.running_mean[c] * scale;
            y.channel_mut(c)
                .iter_mut()
                .for_each(|v| *v = *v * scale + shift);
        }
        y
    }

    pub fn backward(&mut self, cache: &NormCache<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        let count = T::lit(dy.plane() as f64);
        let mut dx = Tensor4::zeros(dy.channels(), dy.batch(), dy.height(), dy.width());
        for c in 0..self.channels() {
            let g = dy.channel(c);
            let xhat = cache.normalized.channel(c);
            let sum_g: T = g.iter().copied().sum();
            let sum_gx: T = g.iter().zip(xhat).map(|(&a, &b)| a * b).sum();
            self.gamma.grad[c] += sum_gx;
            self.beta.grad[c] += sum_g;
            let scale = self.gamma.value[c] * cache.inv_std[c];
            let out = dx.channel_mut(c);
            match cache.mode {
                Mode::Train => {
                    let k = scale / count;
                    for ((o, &gi), &xi) in out.iter_mut().zip(g).zip(xhat) {
                        *o = k * (count * gi - sum_g - xi * sum_gx);
                    }
                }
                Mode::Eval => {
                    for (o, &gi) in out.iter_mut().zip(g) {
                        *o = scale * gi;
                    }
                }
            }
        }
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.gamma, &mut self.beta]
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        vec![&self.gamma, &self.beta]
    }

    pub fn buffers(&self) -> Vec<&Vec<T>> {
        vec![&self.running_mean, &self.running_var]
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Vec<T>> {
        vec![&mut self.running_mean, &mut self.running_var]
    }
}

pub fn relu<T: Real>(x: &Tensor4<T>) -> Tensor4<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient of `relu` given its output.
pub fn relu_backward<T: Real>(out: &Tensor4<T>, dy: &Tensor4<T>) -> Tensor4<T> {
    let mut dx = dy.clone();
    for (d, &o) in dx.data_mut().iter_mut().zip(out.data()) {
        if o <= T::zero() {
            *d = T::zero();
        }
    }
    dx
}

#[derive(Clone, Debug)]
pub struct ResCache<T> {
    spatial: ConvCache<T>,
    pointwise: ConvCache<T>,
}

impl<T: Real> ResCache<T> {
    /// Which ReLU outputs were active, in layer order.
    pub fn activation_pattern(&self) -> impl Iterator<Item = bool> + '_ {
        let active = |c: &ConvCache<T>| {
            c.input()
                .data()
                .iter()
                .map(|&v| v > T::zero())
                .collect::<Vec<_>>()
        };
        active(&self.spatial)
            .into_iter()
            .chain(active(&self.pointwise))
    }
}

/// `x + conv1x1(relu(conv3x3(relu(x))))`, channel count preserved.
#[derive(Clone, Debug, PartialEq)]
pub struct ResBlock<T> {
    pub spatial: Conv2d<T>,
    pub pointwise: Conv2d<T>,
}

impl<T: Real> ResBlock<T> {
    pub fn new<R: Rng + ?Sized>(rng: &mut R, channels: usize) -> Self {
        Self {
            spatial: Conv2d::new(rng, channels, channels, 3, 1, 1),
            pointwise: Conv2d::new(rng, channels, channels, 1, 1, 0),
        }
    }

    pub fn zeroed(channels: usize) -> Self {
        Self {
            spatial: Conv2d::zeroed(channels, channels, 3, 1, 1),
            pointwise: Conv2d::zeroed(channels, channels, 1, 1, 0),
        }
    }

    pub fn apply(&self, x: &Tensor4<T>) -> Tensor4<T> {
        let h = relu(&self.spatial.apply(&relu(x)));
        let mut y = self.pointwise.apply(&h);
        y.add_assign(x);
        y
    }

    pub fn forward(&self, x: &Tensor4<T>) -> (Tensor4<T>, ResCache<T>) {
        let (h, spatial) = self.spatial.forward(&relu(x));
        let (mut y, pointwise) = self.pointwise.forward(&relu(&h));
        y.add_assign(x);
        (y, ResCache { spatial, pointwise })
    }

    pub fn backward(&mut self, cache: &ResCache<T>, dy: &Tensor4<T>) -> Tensor4<T> {
        let dh = self.pointwise.backward(&cache.pointwise, dy);
        let dh = relu_backward(cache.pointwise.input(), &dh);
        let da = self.spatial.backward(&cache.spatial, &dh);
        let mut dx = relu_backward(cache.spatial.input(), &da);
        dx.add_assign(dy);
        dx
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.spatial.params_mut();
        p.extend(self.pointwise.params_mut());
        p
    }

    pub fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.spatial.params();
        p.extend(self.pointwise.params());
        p
    }
}
