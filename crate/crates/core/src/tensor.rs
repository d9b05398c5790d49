//! Dense 4-D `f32` tensors in row-major `(n, c, h, w)` order, the seeded
//! generator used for every stochastic step, and a central-difference
//! gradient oracle for checking backward passes.

use std::fmt;
use std::ops::Range;

use rand::seq::SliceRandom;
use rand::{Rng as _, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};

/// Name of the generator algorithm, recorded in checkpoint headers.
pub const RNG_ALGORITHM: &str = "ChaCha8";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Result<Self> {
        if n == 0 || c == 0 || h == 0 || w == 0 {
            return Err(Error::shape(format!(
                "all dimensions must be >= 1, got ({n}, {c}, {h}, {w})"
            )));
        }
        Ok(Shape { n, c, h, w })
    }

    pub fn len(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn plane(&self) -> usize {
        self.h * self.w
    }

    pub fn dims(&self) -> [usize; 4] {
        [self.n, self.c, self.h, self.w]
    }

    pub fn offset(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        debug_assert!(n < self.n && c < self.c && y < self.h && x < self.w);
        ((n * self.c + c) * self.h + y) * self.w + x
    }

    pub fn index(&self, offset: usize) -> (usize, usize, usize, usize) {
        debug_assert!(offset < self.len());
        let x = offset % self.w;
        let rest = offset / self.w;
        let y = rest % self.h;
        let rest = rest / self.h;
        (rest / self.c, rest % self.c, y, x)
    }

    pub fn with_channels(&self, c: usize) -> Result<Self> {
        Shape::new(self.n, c, self.h, self.w)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {}, {})", self.n, self.c, self.h, self.w)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f32>,
}

impl Tensor {
    pub fn filled(dims: (usize, usize, usize, usize), value: f32) -> Result<Self> {
        let shape = Shape::new(dims.0, dims.1, dims.2, dims.3)?;
        Ok(Self::full(shape, value))
    }

    pub fn full(shape: Shape, value: f32) -> Self {
        Tensor {
            shape,
            data: vec![value; shape.len()],
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn from_vec(shape: Shape, data: Vec<f32>) -> Result<Self> {
        if data.len() != shape.len() {
            return Err(Error::shape(format!(
                "data length {} does not match shape {shape}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    /// Samples every element from `N(0, std^2)`.
    pub fn randn(rng: &mut Rng, dims: (usize, usize, usize, usize), std: f32) -> Result<Self> {
        if !(std > 0.0) || !std.is_finite() {
            return Err(Error::invalid(format!("std must be > 0, got {std}")));
        }
        let shape = Shape::new(dims.0, dims.1, dims.2, dims.3)?;
        let data = (0..shape.len()).map(|_| rng.normal() as f32 * std).collect();
        Ok(Tensor { shape, data })
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f32> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.shape.offset(n, c, y, x)]
    }

    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, value: f32) {
        let off = self.shape.offset(n, c, y, x);
        self.data[off] = value;
    }

    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &self.data[start..start + p]
    }

    pub fn plane_mut(&mut self, n: usize, c: usize) -> &mut [f32] {
        let p = self.shape.plane();
        let start = (n * self.shape.c + c) * p;
        &mut self.data[start..start + p]
    }

    /// Contiguous block holding all channels of batch item `n`.
    pub fn item(&self, n: usize) -> &[f32] {
        let len = self.shape.c * self.shape.plane();
        &self.data[n * len..(n + 1) * len]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor {
            shape: self.shape,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape(format!("cannot add {} into {}", other.shape, self.shape)));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    /// Concatenates along the channel axis; channels of `self` come first.
    pub fn concat_channels(&self, other: &Tensor) -> Result<Tensor> {
        let (a, b) = (self.shape, other.shape);
        if a.n != b.n || a.h != b.h || a.w != b.w {
            return Err(Error::shape(format!("cannot concat {a} with {b}")));
        }
        let shape = a.with_channels(a.c + b.c)?;
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..a.n {
            data.extend_from_slice(self.item(n));
            data.extend_from_slice(other.item(n));
        }
        Ok(Tensor { shape, data })
    }

    pub fn slice_channels(&self, range: Range<usize>) -> Result<Tensor> {
        let s = self.shape;
        if range.start >= range.end || range.end > s.c {
            return Err(Error::shape(format!("channel range {range:?} out of bounds for {s}")));
        }
        let shape = s.with_channels(range.end - range.start)?;
        let p = s.plane();
        let mut data = Vec::with_capacity(shape.len());
        for n in 0..s.n {
            let base = n * s.c * p;
            data.extend_from_slice(&self.data[base + range.start * p..base + range.end * p]);
        }
        Ok(Tensor { shape, data })
    }

    /// Splits channels into `[0, at)` and `[at, c)`.
    pub fn split_channels(&self, at: usize) -> Result<(Tensor, Tensor)> {
        Ok((self.slice_channels(0..at)?, self.slice_channels(at..self.shape.c)?))
    }

    /// Stacks batch items along `n`; all parts must agree on `(c, h, w)`.
    pub fn stack(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts
            .first()
            .ok_or_else(|| Error::shape("cannot stack zero tensors"))?
            .shape;
        let mut n = 0;
        for t in parts {
            let s = t.shape;
            if s.c != first.c || s.h != first.h || s.w != first.w {
                return Err(Error::shape(format!("cannot stack {s} with {first}")));
            }
            n += s.n;
        }
        let shape = Shape::new(n, first.c, first.h, first.w)?;
        let mut data = Vec::with_capacity(shape.len());
        for t in parts {
            data.extend_from_slice(&t.data);
        }
        Ok(Tensor { shape, data })
    }

    /// Extracts batch item `n` as a tensor with batch size 1.
    pub fn batch_item(&self, n: usize) -> Result<Tensor> {
        if n >= self.shape.n {
            return Err(Error::shape(format!("batch index {n} out of range for {}", self.shape)));
        }
        Tensor::from_vec(
            Shape::new(1, self.shape.c, self.shape.h, self.shape.w)?,
            self.item(n).to_vec(),
        )
    }
}

/// Deterministic seeded generator (ChaCha with 8 rounds).
#[derive(Clone, Debug)]
pub struct Rng {
    inner: ChaCha8Rng,
}

impl Rng {
    pub fn seeded(seed: u64) -> Self {
        Rng {
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    /// Uniform sample in `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn below(&mut self, bound: usize) -> usize {
        self.inner.random_range(0..bound)
    }

    pub fn normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

/// Central-difference gradient of `f` at `x`, evaluated in double precision.
///
/// The step actually taken is measured from the rounded `f32` perturbations,
/// so representation error in `x +/- h` does not leak into the quotient.
pub fn finite_difference_grad<F>(mut f: F, x: &Tensor, h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&Tensor) -> f64,
{
    if !(h > 0.0) {
        return Err(Error::invalid(format!("step must be > 0, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data[i];
        let plus = (orig as f64 + h) as f32;
        let minus = (orig as f64 - h) as f32;
        probe.data[i] = plus;
        let fp = f(&probe);
        probe.data[i] = minus;
        let fm = f(&probe);
        probe.data[i] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::Oracle(format!("non-finite function value at element {i}")));
        }
        grad.push((fp - fm) / (plus as f64 - minus as f64));
    }
    Ok(grad)
}
