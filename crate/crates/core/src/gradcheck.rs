//! Finite-difference verification of the layer backward passes.
//!
//! Each check draws a random `1x2x6x6` input, random parameters and a random
//! projection `r`, then compares the analytic gradient of `sum(r * layer(x))`
//! against central differences of the same scalar. Inputs for the
//! piecewise-linear layers are nudged away from kinks and ties so the
//! difference quotient never straddles one.

use crate::error::Result;
use crate::layers::{
    batchnorm_forward, conv2d, dropout_with_mask, pool2x2, relu, sigmoid, transpose_conv2d, BatchNormParams,
    ConvParams, Mode, PoolMode,
};
use crate::tensor::{finite_difference_grad, Rng, Tensor};

pub const ABS_TOL: f64 = 1e-3;
pub const REL_TOL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradKind {
    Conv,
    TransposeConv,
    BatchNorm,
    AveragePool,
    MaxPool,
    Dropout,
    Relu,
    Sigmoid,
}

impl GradKind {
    pub const ALL: [GradKind; 8] = [
        GradKind::Conv,
        GradKind::TransposeConv,
        GradKind::BatchNorm,
        GradKind::AveragePool,
        GradKind::MaxPool,
        GradKind::Dropout,
        GradKind::Relu,
        GradKind::Sigmoid,
    ];

    // Linear and piecewise-linear layers have no truncation error, so a
    // wider step only shrinks the f32 rounding noise in the quotient.
    fn step(self) -> f64 {
        match self {
            GradKind::BatchNorm | GradKind::Sigmoid => 4e-3,
            _ => 1e-2,
        }
    }
}

/// Outcome of one seeded check.
#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub kind: GradKind,
    pub seed: u64,
    pub compared: usize,
    pub max_abs_error: f64,
    /// Largest `error / allowed` over all compared entries; at most 1 passes.
    pub worst_ratio: f64,
}

impl GradReport {
    pub fn passed(&self) -> bool {
        self.worst_ratio <= 1.0
    }
}

#[derive(Default)]
struct Tally {
    compared: usize,
    max_abs: f64,
    worst: f64,
}

impl Tally {
    fn compare(&mut self, analytic: &[f32], numeric: &[f64]) {
        assert_eq!(analytic.len(), numeric.len());
        for (&a, &n) in analytic.iter().zip(numeric) {
            let err = (a as f64 - n).abs();
            let allowed = ABS_TOL.max(REL_TOL * n.abs());
            self.compared += 1;
            self.max_abs = self.max_abs.max(err);
            self.worst = self.worst.max(err / allowed);
        }
    }
}

fn project(y: &Tensor, r: &[f64]) -> f64 {
    y.data().iter().zip(r).map(|(&v, &k)| v as f64 * k).sum()
}

fn projection(rng: &mut Rng, len: usize) -> Vec<f64> {
    (0..len).map(|_| rng.normal()).collect()
}

fn as_tensor(values: &[f32]) -> Tensor {
    Tensor::filled((1, 1, 1, values.len()), 0.0)
        .and_then(|t| Tensor::from_vec(t.shape(), values.to_vec()))
        .expect("nonempty")
}

fn random_conv(rng: &mut Rng, c_out: usize, c_in: usize) -> Result<ConvParams> {
    let weight = Tensor::randn(rng, (c_out, c_in, 3, 3), 0.5)?;
    let bias = (0..c_out).map(|_| rng.normal() as f32 * 0.1).collect();
    ConvParams::new(weight, bias)
}

pub fn check(kind: GradKind, seed: u64) -> Result<GradReport> {
    let mut rng = Rng::seeded(seed ^ 0x9e37_79b9_7f4a_7c15);
    let h = kind.step();
    let mut x = Tensor::randn(&mut rng, (1, 2, 6, 6), 1.0)?;
    let mut tally = Tally::default();

    match kind {
        GradKind::Conv | GradKind::TransposeConv => {
            let params = random_conv(&mut rng, 3, 2)?;
            let up = kind == GradKind::TransposeConv;
            let fwd = |x: &Tensor, p: &ConvParams| -> Tensor {
                if up {
                    transpose_conv2d(x, p).expect("shapes").0
                } else {
                    conv2d(x, p).expect("shapes").0
                }
            };
            let y = fwd(&x, &params);
            let r = projection(&mut rng, y.len());
            let grad_out = Tensor::from_vec(y.shape(), r.iter().map(|&v| v as f32).collect())?;
            let (gx, gp) = if up {
                transpose_conv2d(&x, &params)?.1.backward(&grad_out)?
            } else {
                conv2d(&x, &params)?.1.backward(&grad_out)?
            };
            tally.compare(
                gx.data(),
                &finite_difference_grad(|t| project(&fwd(t, &params), &r), &x, h)?,
            );
            let nw = finite_difference_grad(
                |w| {
                    let p = ConvParams::new(w.clone(), params.bias.clone()).expect("shapes");
                    project(&fwd(&x, &p), &r)
                },
                &params.weight,
                h,
            )?;
            tally.compare(gp.weight.data(), &nw);
            let nb = finite_difference_grad(
                |b| {
                    let p = ConvParams::new(params.weight.clone(), b.data().to_vec()).expect("shapes");
                    project(&fwd(&x, &p), &r)
                },
                &as_tensor(&params.bias),
                h,
            )?;
            tally.compare(&gp.bias, &nb);
        }
        GradKind::BatchNorm => {
            let mut params = BatchNormParams::new(2);
            params.gamma = (0..2).map(|_| 0.5 + rng.uniform() as f32).collect();
            params.beta = (0..2).map(|_| rng.normal() as f32 * 0.1).collect();
            let fwd = |x: &Tensor, p: &BatchNormParams| batchnorm_forward(x, p, Mode::Training).expect("shapes").0;
            let y = fwd(&x, &params);
            let r = projection(&mut rng, y.len());
            let grad_out = Tensor::from_vec(y.shape(), r.iter().map(|&v| v as f32).collect())?;
            let (gx, gp) = batchnorm_forward(&x, &params, Mode::Training)?.1.backward(&grad_out)?;
            tally.compare(
                gx.data(),
                &finite_difference_grad(|t| project(&fwd(t, &params), &r), &x, h)?,
            );
            let ng = finite_difference_grad(
                |g| {
                    let mut p = params.clone();
                    p.gamma = g.data().to_vec();
                    project(&fwd(&x, &p), &r)
                },
                &as_tensor(&params.gamma),
                h,
            )?;
            tally.compare(&gp.gamma, &ng);
            let nb = finite_difference_grad(
                |b| {
                    let mut p = params.clone();
                    p.beta = b.data().to_vec();
                    project(&fwd(&x, &p), &r)
                },
                &as_tensor(&params.beta),
                h,
            )?;
            tally.compare(&gp.beta, &nb);
        }
        GradKind::AveragePool | GradKind::MaxPool => {
            let mode = if kind == GradKind::MaxPool {
                separate_block_maxima(&mut x, 8.0 * h as f32);
                PoolMode::Max
            } else {
                PoolMode::Average
            };
            let (y, cache) = pool2x2(&x, mode)?;
            let r = projection(&mut rng, y.len());
            let grad_out = Tensor::from_vec(y.shape(), r.iter().map(|&v| v as f32).collect())?;
            let gx = cache.backward(&grad_out)?;
            let n = finite_difference_grad(|t| project(&pool2x2(t, mode).expect("even").0, &r), &x, h)?;
            tally.compare(gx.data(), &n);
        }
        GradKind::Dropout => {
            let keep = 1.0 / 0.8;
            let mask: Vec<f32> = (0..x.len())
                .map(|_| if rng.uniform() < 0.2 { 0.0 } else { keep })
                .collect();
            let (y, cache) = dropout_with_mask(&x, mask.clone());
            let r = projection(&mut rng, y.len());
            let grad_out = Tensor::from_vec(y.shape(), r.iter().map(|&v| v as f32).collect())?;
            let gx = cache.backward(&grad_out)?;
            let n = finite_difference_grad(|t| project(&dropout_with_mask(t, mask.clone()).0, &r), &x, h)?;
            tally.compare(gx.data(), &n);
        }
        GradKind::Relu => {
            let margin = 4.0 * h as f32;
            x = x.map(|v| if v >= 0.0 { v + margin } else { v - margin });
            let (y, cache) = relu(&x);
            let r = projection(&mut rng, y.len());
            let grad_out = Tensor::from_vec(y.shape(), r.iter().map(|&v| v as f32).collect())?;
            let gx = cache.backward(&grad_out)?;
            let n = finite_difference_grad(|t| project(&relu(t).0, &r), &x, h)?;
            tally.compare(gx.data(), &n);
        }
        GradKind::Sigmoid => {
            let x = x.map(|v| 2.0 * v);
            let (y, cache) = sigmoid(&x);
            let r = projection(&mut rng, y.len());
            let grad_out = Tensor::from_vec(y.shape(), r.iter().map(|&v| v as f32).collect())?;
            let gx = cache.backward(&grad_out)?;
            let n = finite_difference_grad(|t| project(&sigmoid(t).0, &r), &x, h)?;
            tally.compare(gx.data(), &n);
        }
    }

    Ok(GradReport {
        kind,
        seed,
        compared: tally.compared,
        max_abs_error: tally.max_abs,
        worst_ratio: tally.worst,
    })
}

/// Raises each 2x2 block's maximum so it leads the runner-up by `gap`.
fn separate_block_maxima(x: &mut Tensor, gap: f32) {
    let s = x.shape();
    for n in 0..s.n {
        for c in 0..s.c {
            let w = s.w;
            let plane = x.plane_mut(n, c);
            for by in 0..s.h / 2 {
                for bx in 0..w / 2 {
                    let idx = [
                        2 * by * w + 2 * bx,
                        2 * by * w + 2 * bx + 1,
                        (2 * by + 1) * w + 2 * bx,
                        (2 * by + 1) * w + 2 * bx + 1,
                    ];
                    let best = idx
                        .iter()
                        .copied()
                        .fold(idx[0], |b, i| if plane[i] > plane[b] { i } else { b });
                    plane[best] += gap;
                }
            }
        }
    }
}
