//! Fixtures shared by the benchmarks.

use dced_core::image::Mask;
use dced_core::{Rng, Tensor};

pub fn random_input(seed: u64, channels: usize, side: usize) -> Tensor {
    Tensor::randn(&mut Rng::seeded(seed), (1, channels, side, side), 1.0).expect("nonzero dims")
}

/// A disc of radius `r` on a `side x side` background.
pub fn disc_mask(side: usize, cx: f64, cy: f64, r: f64) -> Mask {
    let data = (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            u8::from((x - cx).hypot(y - cy) > r)
        })
        .collect();
    Mask::new(side, side, data).expect("sized")
}
