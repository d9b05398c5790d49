//! Layer primitives with analytic backward passes.
//!
//! Every forward function returns its output together with a cache that
//! holds exactly what the matching backward pass needs. Caches are not
//! `Clone` and backward consumes them by value, so a cache can feed at most
//! one backward call.
//!
//! Convolutions use the cross-correlation convention (no kernel flip) with
//! 3x3 kernels. `conv2d` runs at stride 1 with zero padding 1, and
//! `transpose_conv2d` is the adjoint of a stride-2, padding-1 convolution,
//! so its output is exactly twice the input size.

use crate::error::{Error, Result};
use crate::tensor::{Rng, Shape, Tensor};

pub const KERNEL: usize = 3;
pub const BATCHNORM_MOMENTUM: f32 = 0.9;
pub const BATCHNORM_EPSILON: f32 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv,
    TransposeConv,
    BatchNorm,
    Pool,
    Dropout,
    Relu,
    Sigmoid,
}

/// Weights `(c_out, c_in, 3, 3)` plus one bias per output channel.
///
/// The same layout serves both convolution and transpose convolution.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

impl ConvParams {
    pub fn new(weight: Tensor, bias: Vec<f32>) -> Result<Self> {
        let s = weight.shape();
        if s.h != KERNEL || s.w != KERNEL {
            return Err(Error::shape(format!("kernel must be 3x3, got {s}")));
        }
        if bias.len() != s.n {
            return Err(Error::shape(format!(
                "bias length {} does not match {} output channels",
                bias.len(),
                s.n
            )));
        }
        Ok(ConvParams { weight, bias })
    }

    pub fn zeros(c_out: usize, c_in: usize) -> Result<Self> {
        let shape = Shape::new(c_out, c_in, KERNEL, KERNEL)?;
        Ok(ConvParams {
            weight: Tensor::zeros(shape),
            bias: vec![0.0; c_out],
        })
    }

    /// Zero-mean normal weights with std `sqrt(2 / fan_in)`, zero bias.
    pub fn he_normal(rng: &mut Rng, c_out: usize, c_in: usize) -> Result<Self> {
        let fan_in = (c_in * KERNEL * KERNEL) as f32;
        let weight = Tensor::randn(rng, (c_out, c_in, KERNEL, KERNEL), (2.0 / fan_in).sqrt())?;
        Ok(ConvParams {
            weight,
            bias: vec![0.0; c_out],
        })
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape().n
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape().c
    }

    fn kernel(&self, o: usize, i: usize) -> &[f32] {
        self.weight.plane(o, i)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvGrads {
    pub weight: Tensor,
    pub bias: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormParams {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub running_mean: Vec<f32>,
    pub running_var: Vec<f32>,
    pub momentum: f32,
    pub epsilon: f32,
}

impl BatchNormParams {
    pub fn new(channels: usize) -> Self {
        BatchNormParams {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum: BATCHNORM_MOMENTUM,
            epsilon: BATCHNORM_EPSILON,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    /// Folds one batch's statistics into the running estimates:
    /// `running = momentum * running + (1 - momentum) * batch`.
    pub fn absorb(&mut self, stats: &BatchStats) {
        let m = self.momentum;
        for c in 0..self.channels() {
            self.running_mean[c] = m * self.running_mean[c] + (1.0 - m) * stats.mean[c];
            self.running_var[c] = m * self.running_var[c] + (1.0 - m) * stats.unbiased_var[c];
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchNormGrads {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
}

/// Per-channel statistics of one training batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f32>,
    pub unbiased_var: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub rate: f32,
}

impl DropoutSpec {
    pub fn new(rate: f32) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::invalid(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        Ok(DropoutSpec { rate })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Average,
    Max,
}

pub enum ParamGrads {
    Conv(ConvGrads),
    BatchNorm(BatchNormGrads),
}

// ---------------------------------------------------------------------------
// caches

pub struct ConvCache {
    input: Tensor,
    params: ConvParams,
}

pub struct TransposeConvCache {
    input: Tensor,
    params: ConvParams,
}

pub struct BatchNormCache {
    mode: Mode,
    normalized: Tensor,
    inv_std: Vec<f32>,
    gamma: Vec<f32>,
    stats: Option<BatchStats>,
}

impl BatchNormCache {
    /// Batch statistics observed in training mode.
    pub fn stats(&self) -> Option<&BatchStats> {
        self.stats.as_ref()
    }
}

pub struct PoolCache {
    mode: PoolMode,
    input_shape: Shape,
    argmax: Vec<u8>,
}

pub struct DropoutCache {
    scale: Option<Vec<f32>>,
}

pub struct ReluCache {
    active: Vec<bool>,
}

pub struct SigmoidCache {
    output: Tensor,
}

pub enum LayerCache {
    Conv(ConvCache),
    TransposeConv(TransposeConvCache),
    BatchNorm(BatchNormCache),
    Pool(PoolCache),
    Dropout(DropoutCache),
    Relu(ReluCache),
    Sigmoid(SigmoidCache),
}

macro_rules! cache_from {
    ($($ty:ident => $var:ident),*) => {
        $(impl From<$ty> for LayerCache {
            fn from(c: $ty) -> Self {
                LayerCache::$var(c)
            }
        })*
    };
}

cache_from!(
    ConvCache => Conv,
    TransposeConvCache => TransposeConv,
    BatchNormCache => BatchNorm,
    PoolCache => Pool,
    DropoutCache => Dropout,
    ReluCache => Relu,
    SigmoidCache => Sigmoid
);

impl LayerCache {
    pub fn kind(&self) -> LayerKind {
        match self {
            LayerCache::Conv(_) => LayerKind::Conv,
            LayerCache::TransposeConv(_) => LayerKind::TransposeConv,
            LayerCache::BatchNorm(_) => LayerKind::BatchNorm,
            LayerCache::Pool(_) => LayerKind::Pool,
            LayerCache::Dropout(_) => LayerKind::Dropout,
            LayerCache::Relu(_) => LayerKind::Relu,
            LayerCache::Sigmoid(_) => LayerKind::Sigmoid,
        }
    }
}

/// Vector-Jacobian product for any layer kind.
///
/// Parameter gradients are returned for convolution, transpose convolution
/// and batch normalization. Passing a cache of a different kind than `kind`
/// is a contract error.
pub fn layer_backward(kind: LayerKind, cache: LayerCache, grad_out: &Tensor) -> Result<(Tensor, Option<ParamGrads>)> {
    if cache.kind() != kind {
        return Err(Error::Contract(format!(
            "backward for {kind:?} called with a {:?} cache",
            cache.kind()
        )));
    }
    Ok(match cache {
        LayerCache::Conv(c) => {
            let (g, p) = c.backward(grad_out)?;
            (g, Some(ParamGrads::Conv(p)))
        }
        LayerCache::TransposeConv(c) => {
            let (g, p) = c.backward(grad_out)?;
            (g, Some(ParamGrads::Conv(p)))
        }
        LayerCache::BatchNorm(c) => {
            let (g, p) = c.backward(grad_out)?;
            (g, Some(ParamGrads::BatchNorm(p)))
        }
        LayerCache::Pool(c) => (c.backward(grad_out)?, None),
        LayerCache::Dropout(c) => (c.backward(grad_out)?, None),
        LayerCache::Relu(c) => (c.backward(grad_out)?, None),
        LayerCache::Sigmoid(c) => (c.backward(grad_out)?, None),
    })
}

fn expect_shape(what: &str, got: Shape, want: Shape) -> Result<()> {
    if got != want {
        return Err(Error::shape(format!("{what}: expected {want}, got {got}")));
    }
    Ok(())
}

// Eight independent accumulators keep the reduction order fixed while
// letting the compiler vectorize.
fn dot(a: &[f32], b: &[f32]) -> f32 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [0.0f32; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let mut tail = 0.0;
    for (x, y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    acc.iter().sum::<f32>() + tail
}

fn axpy(dst: &mut [f32], k: f32, src: &[f32]) {
    debug_assert_eq!(dst.len(), src.len());
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}

/// Valid output range `[lo, hi)` along one axis for kernel tap offset `d`.
fn tap_range(len: usize, d: isize) -> (usize, usize) {
    let lo = (-d).max(0) as usize;
    let hi = (len as isize - d).min(len as isize).max(0) as usize;
    (lo, hi)
}

// ---------------------------------------------------------------------------
// convolution

pub fn conv2d(input: &Tensor, params: &ConvParams) -> Result<(Tensor, ConvCache)> {
    let out = conv2d_forward(input, params)?;
    Ok((
        out,
        ConvCache {
            input: input.clone(),
            params: params.clone(),
        },
    ))
}

/// Stride-1, padding-1 convolution without building a cache.
pub fn conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    if s.c != params.c_in() {
        return Err(Error::shape(format!(
            "conv expects {} input channels, got {s}",
            params.c_in()
        )));
    }
    let (h, w) = (s.h, s.w);
    let c_out = params.c_out();
    let mut out = Tensor::zeros(s.with_channels(c_out)?);
    for n in 0..s.n {
        for o in 0..c_out {
            let dst = out.plane_mut(n, o);
            dst.fill(params.bias[o]);
            for i in 0..s.c {
                let src = input.plane(n, i);
                let k = params.kernel(o, i);
                for ky in 0..KERNEL {
                    let dy = ky as isize - 1;
                    let (y0, y1) = tap_range(h, dy);
                    for kx in 0..KERNEL {
                        let wk = k[ky * KERNEL + kx];
                        let dx = kx as isize - 1;
                        let (x0, x1) = tap_range(w, dx);
                        if x0 >= x1 {
                            continue;
                        }
                        for y in y0..y1 {
                            let sy = (y as isize + dy) as usize;
                            let sx0 = (x0 as isize + dx) as usize;
                            let srow = &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)];
                            axpy(&mut dst[y * w + x0..y * w + x1], wk, srow);
                        }
                    }
                }
            }
        }
    }
    debug_assert!(!input.is_finite() || out.is_finite());
    Ok(out)
}

impl ConvCache {
    pub fn backward(self, grad_out: &Tensor) -> Result<(Tensor, ConvGrads)> {
        self.backward_impl(grad_out, true)
    }

    /// Parameter gradients only; the returned input gradient is all zeros.
    pub fn backward_params_only(self, grad_out: &Tensor) -> Result<(Tensor, ConvGrads)> {
        self.backward_impl(grad_out, false)
    }

    fn backward_impl(self, grad_out: &Tensor, want_input: bool) -> Result<(Tensor, ConvGrads)> {
        let s = self.input.shape();
        let params = &self.params;
        let c_out = params.c_out();
        expect_shape("conv grad_out", grad_out.shape(), s.with_channels(c_out)?)?;
        let (h, w) = (s.h, s.w);

        let mut grad_in = Tensor::zeros(s);
        if want_input {
            for n in 0..s.n {
                for i in 0..s.c {
                    let dst = grad_in.plane_mut(n, i);
                    for o in 0..c_out {
                        let g = grad_out.plane(n, o);
                        let k = params.kernel(o, i);
                        for ky in 0..KERNEL {
                            let dy = ky as isize - 1;
                            let (y0, y1) = tap_range(h, dy);
                            for kx in 0..KERNEL {
                                let wk = k[ky * KERNEL + kx];
                                let dx = kx as isize - 1;
                                let (x0, x1) = tap_range(w, dx);
                                if x0 >= x1 {
                                    continue;
                                }
                                for y in y0..y1 {
                                    let sy = (y as isize + dy) as usize;
                                    let sx0 = (x0 as isize + dx) as usize;
                                    axpy(
                                        &mut dst[sy * w + sx0..sy * w + sx0 + (x1 - x0)],
                                        wk,
                                        &g[y * w + x0..y * w + x1],
                                    );
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut weight = Tensor::zeros(params.weight.shape());
        let mut bias = vec![0.0f32; c_out];
        for o in 0..c_out {
            let mut bsum = 0.0f64;
            for n in 0..s.n {
                bsum += grad_out.plane(n, o).iter().map(|&v| v as f64).sum::<f64>();
            }
            bias[o] = bsum as f32;
            for i in 0..s.c {
                let mut taps = [0.0f64; KERNEL * KERNEL];
                for n in 0..s.n {
                    let g = grad_out.plane(n, o);
                    let src = self.input.plane(n, i);
                    for ky in 0..KERNEL {
                        let dy = ky as isize - 1;
                        let (y0, y1) = tap_range(h, dy);
                        for kx in 0..KERNEL {
                            let dx = kx as isize - 1;
                            let (x0, x1) = tap_range(w, dx);
                            if x0 >= x1 {
                                continue;
                            }
                            let mut acc = 0.0f32;
                            for y in y0..y1 {
                                let sy = (y as isize + dy) as usize;
                                let sx0 = (x0 as isize + dx) as usize;
                                acc += dot(&g[y * w + x0..y * w + x1], &src[sy * w + sx0..sy * w + sx0 + (x1 - x0)]);
                            }
                            taps[ky * KERNEL + kx] += acc as f64;
                        }
                    }
                }
                let dst = weight.plane_mut(o, i);
                for (d, t) in dst.iter_mut().zip(taps) {
                    *d = t as f32;
                }
            }
        }
        Ok((grad_in, ConvGrads { weight, bias }))
    }
}

// ---------------------------------------------------------------------------
// transpose convolution

/// Stride-2 transpose convolution: input pixel `(iy, ix)` scatters
/// `w[o, i, ky, kx] * x` onto output pixel `(2*iy + ky - 1, 2*ix + kx - 1)`,
/// dropping taps that fall outside `[0, 2h) x [0, 2w)`.
pub fn transpose_conv2d(input: &Tensor, params: &ConvParams) -> Result<(Tensor, TransposeConvCache)> {
    let out = transpose_conv2d_forward(input, params)?;
    Ok((
        out,
        TransposeConvCache {
            input: input.clone(),
            params: params.clone(),
        },
    ))
}

/// Input index range whose stride-2 tap `k` lands inside the output.
fn up_range(len: usize, k: usize) -> std::ops::Range<usize> {
    if k == 0 {
        1..len
    } else {
        0..len
    }
}

pub fn transpose_conv2d_forward(input: &Tensor, params: &ConvParams) -> Result<Tensor> {
    let s = input.shape();
    if s.c != params.c_in() {
        return Err(Error::shape(format!(
            "transpose conv expects {} input channels, got {s}",
            params.c_in()
        )));
    }
    let (h, w) = (s.h, s.w);
    let (oh, ow) = (2 * h, 2 * w);
    let c_out = params.c_out();
    let mut out = Tensor::zeros(Shape::new(s.n, c_out, oh, ow)?);
    for n in 0..s.n {
        for o in 0..c_out {
            let dst = out.plane_mut(n, o);
            dst.fill(params.bias[o]);
            for i in 0..s.c {
                let src = input.plane(n, i);
                let k = params.kernel(o, i);
                for ky in 0..KERNEL {
                    for iy in up_range(h, ky) {
                        let oy = 2 * iy + ky - 1;
                        let srow = &src[iy * w..(iy + 1) * w];
                        let drow = &mut dst[oy * ow..(oy + 1) * ow];
                        for kx in 0..KERNEL {
                            let wk = k[ky * KERNEL + kx];
                            for ix in up_range(w, kx) {
                                drow[2 * ix + kx - 1] += wk * srow[ix];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

impl TransposeConvCache {
    pub fn backward(self, grad_out: &Tensor) -> Result<(Tensor, ConvGrads)> {
        let s = self.input.shape();
        let params = &self.params;
        let c_out = params.c_out();
        let (h, w) = (s.h, s.w);
        let ow = 2 * w;
        expect_shape(
            "transpose conv grad_out",
            grad_out.shape(),
            Shape::new(s.n, c_out, 2 * h, ow)?,
        )?;

        let mut grad_in = Tensor::zeros(s);
        for n in 0..s.n {
            for i in 0..s.c {
                let dst = grad_in.plane_mut(n, i);
                for o in 0..c_out {
                    let g = grad_out.plane(n, o);
                    let k = params.kernel(o, i);
                    for ky in 0..KERNEL {
                        for iy in up_range(h, ky) {
                            let grow = &g[(2 * iy + ky - 1) * ow..(2 * iy + ky) * ow];
                            let drow = &mut dst[iy * w..(iy + 1) * w];
                            for kx in 0..KERNEL {
                                let wk = k[ky * KERNEL + kx];
                                for ix in up_range(w, kx) {
                                    drow[ix] += wk * grow[2 * ix + kx - 1];
                                }
                            }
                        }
                    }
                }
            }
        }

        let mut weight = Tensor::zeros(params.weight.shape());
        let mut bias = vec![0.0f32; c_out];
        for o in 0..c_out {
            let mut bsum = 0.0f64;
            for n in 0..s.n {
                bsum += grad_out.plane(n, o).iter().map(|&v| v as f64).sum::<f64>();
            }
            bias[o] = bsum as f32;
            for i in 0..s.c {
                let mut taps = [0.0f64; KERNEL * KERNEL];
                for n in 0..s.n {
                    let g = grad_out.plane(n, o);
                    let src = self.input.plane(n, i);
                    for ky in 0..KERNEL {
                        for kx in 0..KERNEL {
                            let mut acc = 0.0f32;
                            for iy in up_range(h, ky) {
                                let grow = &g[(2 * iy + ky - 1) * ow..(2 * iy + ky) * ow];
                                let srow = &src[iy * w..(iy + 1) * w];
                                for ix in up_range(w, kx) {
                                    acc += srow[ix] * grow[2 * ix + kx - 1];
                                }
                            }
                            taps[ky * KERNEL + kx] += acc as f64;
                        }
                    }
                }
                let dst = weight.plane_mut(o, i);
                for (d, t) in dst.iter_mut().zip(taps) {
                    *d = t as f32;
                }
            }
        }
        Ok((grad_in, ConvGrads { weight, bias }))
    }
}

// ---------------------------------------------------------------------------
// batch normalization

/// Batch normalization; training mode also folds the batch statistics into
/// the running estimates of `params`.
pub fn batchnorm(input: &Tensor, params: &mut BatchNormParams, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
    let (out, cache) = batchnorm_forward(input, params, mode)?;
    if let Some(stats) = cache.stats() {
        params.absorb(stats);
    }
    Ok((out, cache))
}

/// Batch normalization that leaves running statistics untouched; the batch
/// statistics are returned in the cache for the caller to absorb.
pub fn batchnorm_forward(input: &Tensor, params: &BatchNormParams, mode: Mode) -> Result<(Tensor, BatchNormCache)> {
    let s = input.shape();
    if s.c != params.channels() {
        return Err(Error::shape(format!(
            "batchnorm has {} channels, input is {s}",
            params.channels()
        )));
    }
    let m = (s.n * s.plane()) as f64;
    let mut normalized = Tensor::zeros(s);
    let mut out = Tensor::zeros(s);
    let mut inv_std = vec![0.0f32; s.c];
    let mut stats = BatchStats {
        mean: vec![0.0; s.c],
        unbiased_var: vec![0.0; s.c],
    };
    for c in 0..s.c {
        let (mean, istd) = match mode {
            Mode::Training => {
                let mut sum = 0.0f64;
                for n in 0..s.n {
                    sum += input.plane(n, c).iter().map(|&v| v as f64).sum::<f64>();
                }
                let mean = sum / m;
                let mut sq = 0.0f64;
                for n in 0..s.n {
                    sq += input
                        .plane(n, c)
                        .iter()
                        .map(|&v| (v as f64 - mean).powi(2))
                        .sum::<f64>();
                }
                let var = sq / m;
                stats.mean[c] = mean as f32;
                stats.unbiased_var[c] = if m > 1.0 { (sq / (m - 1.0)) as f32 } else { 0.0 };
                (mean, 1.0 / (var + params.epsilon as f64).sqrt())
            }
            Mode::Inference => (
                params.running_mean[c] as f64,
                1.0 / (params.running_var[c] as f64 + params.epsilon as f64).sqrt(),
            ),
        };
        inv_std[c] = istd as f32;
        let (g, b) = (params.gamma[c], params.beta[c]);
        for n in 0..s.n {
            let src = input.plane(n, c);
            let xh: Vec<f32> = src.iter().map(|&v| ((v as f64 - mean) * istd) as f32).collect();
            for (d, &v) in out.plane_mut(n, c).iter_mut().zip(&xh) {
                *d = g * v + b;
            }
            normalized.plane_mut(n, c).copy_from_slice(&xh);
        }
    }
    Ok((
        out,
        BatchNormCache {
            mode,
            normalized,
            inv_std,
            gamma: params.gamma.clone(),
            stats: (mode == Mode::Training).then_some(stats),
        },
    ))
}

impl BatchNormCache {
    pub fn backward(self, grad_out: &Tensor) -> Result<(Tensor, BatchNormGrads)> {
        let s = self.normalized.shape();
        expect_shape("batchnorm grad_out", grad_out.shape(), s)?;
        let m = (s.n * s.plane()) as f64;
        let mut grad_in = Tensor::zeros(s);
        let mut dgamma = vec![0.0f32; s.c];
        let mut dbeta = vec![0.0f32; s.c];
        for c in 0..s.c {
            let mut sum_g = 0.0f64;
            let mut sum_gx = 0.0f64;
            for n in 0..s.n {
                for (&g, &xh) in grad_out.plane(n, c).iter().zip(self.normalized.plane(n, c)) {
                    sum_g += g as f64;
                    sum_gx += g as f64 * xh as f64;
                }
            }
            dgamma[c] = sum_gx as f32;
            dbeta[c] = sum_g as f32;
            let gamma = self.gamma[c] as f64;
            let istd = self.inv_std[c] as f64;
            for n in 0..s.n {
                let g = grad_out.plane(n, c);
                let xh = self.normalized.plane(n, c);
                let dst = grad_in.plane_mut(n, c);
                match self.mode {
                    Mode::Training => {
                        // dx = gamma * istd / m * (m * g - sum(g) - xhat * sum(g * xhat))
                        let scale = gamma * istd / m;
                        for ((d, &gv), &xv) in dst.iter_mut().zip(g).zip(xh) {
                            *d = (scale * (m * gv as f64 - sum_g - xv as f64 * sum_gx)) as f32;
                        }
                    }
                    Mode::Inference => {
                        let scale = (gamma * istd) as f32;
                        for (d, &gv) in dst.iter_mut().zip(g) {
                            *d = scale * gv;
                        }
                    }
                }
            }
        }
        Ok((
            grad_in,
            BatchNormGrads {
                gamma: dgamma,
                beta: dbeta,
            },
        ))
    }
}

// ---------------------------------------------------------------------------
// pooling

pub fn pool2x2(input: &Tensor, mode: PoolMode) -> Result<(Tensor, PoolCache)> {
    let s = input.shape();
    if !s.h.is_multiple_of(2) || !s.w.is_multiple_of(2) {
        return Err(Error::shape(format!("2x2 pooling needs even spatial dims, got {s}")));
    }
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Tensor::zeros(Shape::new(s.n, s.c, oh, ow)?);
    let mut argmax = Vec::new();
    if mode == PoolMode::Max {
        argmax.reserve(out.len());
    }
    for n in 0..s.n {
        for c in 0..s.c {
            let src = input.plane(n, c);
            let dst = out.plane_mut(n, c);
            for y in 0..oh {
                let r0 = &src[2 * y * s.w..(2 * y + 1) * s.w];
                let r1 = &src[(2 * y + 1) * s.w..(2 * y + 2) * s.w];
                for x in 0..ow {
                    let v = [r0[2 * x], r0[2 * x + 1], r1[2 * x], r1[2 * x + 1]];
                    dst[y * ow + x] = match mode {
                        PoolMode::Average => (v[0] + v[1] + v[2] + v[3]) * 0.25,
                        PoolMode::Max => {
                            let mut best = 0;
                            for k in 1..4 {
                                if v[k] > v[best] {
                                    best = k;
                                }
                            }
                            argmax.push(best as u8);
                            v[best]
                        }
                    };
                }
            }
        }
    }
    Ok((
        out,
        PoolCache {
            mode,
            input_shape: s,
            argmax,
        },
    ))
}

impl PoolCache {
    pub fn backward(self, grad_out: &Tensor) -> Result<Tensor> {
        let s = self.input_shape;
        let (oh, ow) = (s.h / 2, s.w / 2);
        expect_shape("pool grad_out", grad_out.shape(), Shape::new(s.n, s.c, oh, ow)?)?;
        let mut grad_in = Tensor::zeros(s);
        let mut idx = 0;
        for n in 0..s.n {
            for c in 0..s.c {
                let g = grad_out.plane(n, c);
                let dst = grad_in.plane_mut(n, c);
                for y in 0..oh {
                    for x in 0..ow {
                        let gv = g[y * ow + x];
                        let taps = [
                            2 * y * s.w + 2 * x,
                            2 * y * s.w + 2 * x + 1,
                            (2 * y + 1) * s.w + 2 * x,
                            (2 * y + 1) * s.w + 2 * x + 1,
                        ];
                        match self.mode {
                            PoolMode::Average => {
                                for t in taps {
                                    dst[t] += 0.25 * gv;
                                }
                            }
                            PoolMode::Max => {
                                dst[taps[self.argmax[idx] as usize]] += gv;
                                idx += 1;
                            }
                        }
                    }
                }
            }
        }
        Ok(grad_in)
    }
}

// ---------------------------------------------------------------------------
// dropout

/// Inverted dropout: in training each element is zeroed with probability
/// `rate` and survivors are scaled by `1 / (1 - rate)`; inference is the
/// identity and never touches `rng`.
pub fn dropout(input: &Tensor, spec: DropoutSpec, mode: Mode, rng: &mut Rng) -> Result<(Tensor, DropoutCache)> {
    DropoutSpec::new(spec.rate)?;
    if mode == Mode::Inference || spec.rate == 0.0 {
        return Ok((input.clone(), DropoutCache { scale: None }));
    }
    let keep = 1.0 / (1.0 - spec.rate);
    let scale: Vec<f32> = (0..input.len())
        .map(|_| if rng.uniform() < spec.rate as f64 { 0.0 } else { keep })
        .collect();
    Ok(dropout_with_mask(input, scale))
}

/// Applies a precomputed per-element scale mask.
pub fn dropout_with_mask(input: &Tensor, scale: Vec<f32>) -> (Tensor, DropoutCache) {
    assert_eq!(scale.len(), input.len(), "dropout mask length");
    let data = input.data().iter().zip(&scale).map(|(&v, &k)| v * k).collect();
    let out = Tensor::from_vec(input.shape(), data).expect("same shape");
    (out, DropoutCache { scale: Some(scale) })
}

impl DropoutCache {
    pub fn backward(self, grad_out: &Tensor) -> Result<Tensor> {
        match self.scale {
            None => Ok(grad_out.clone()),
            Some(scale) => {
                if scale.len() != grad_out.len() {
                    return Err(Error::shape(format!(
                        "dropout grad_out {} does not match mask length {}",
                        grad_out.shape(),
                        scale.len()
                    )));
                }
                let data = grad_out.data().iter().zip(&scale).map(|(&g, &k)| g * k).collect();
                Tensor::from_vec(grad_out.shape(), data)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// activations

pub fn relu(input: &Tensor) -> (Tensor, ReluCache) {
    let active: Vec<bool> = input.data().iter().map(|&v| v > 0.0).collect();
    (input.map(|v| v.max(0.0)), ReluCache { active })
}

impl ReluCache {
    pub fn backward(self, grad_out: &Tensor) -> Result<Tensor> {
        if self.active.len() != grad_out.len() {
            return Err(Error::shape(format!(
                "relu grad_out {} does not match forward length {}",
                grad_out.shape(),
                self.active.len()
            )));
        }
        let data = grad_out
            .data()
            .iter()
            .zip(&self.active)
            .map(|(&g, &a)| if a { g } else { 0.0 })
            .collect();
        Tensor::from_vec(grad_out.shape(), data)
    }
}

/// Lowest and highest value the logistic output may take, keeping the
/// probability map strictly inside `(0, 1)` in `f32`.
pub const PROB_FLOOR: f32 = f32::EPSILON;
pub const PROB_CEIL: f32 = 1.0 - f32::EPSILON;

/// Logistic squashing `1 / (1 + exp(-x))`, clamped to `[PROB_FLOOR, PROB_CEIL]`.
pub fn sigmoid(input: &Tensor) -> (Tensor, SigmoidCache) {
    let out = input.map(|v| {
        let p = if v >= 0.0 {
            1.0 / (1.0 + (-v).exp())
        } else {
            let e = v.exp();
            e / (1.0 + e)
        };
        p.clamp(PROB_FLOOR, PROB_CEIL)
    });
    (out.clone(), SigmoidCache { output: out })
}

impl SigmoidCache {
    pub fn backward(self, grad_out: &Tensor) -> Result<Tensor> {
        expect_shape("sigmoid grad_out", grad_out.shape(), self.output.shape())?;
        let data = grad_out
            .data()
            .iter()
            .zip(self.output.data())
            .map(|(&g, &y)| g * y * (1.0 - y))
            .collect();
        Tensor::from_vec(grad_out.shape(), data)
    }
}
