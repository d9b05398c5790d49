//! Multi-level convolutional encoder-decoder segmentation for blood-smear
//! images, implemented from scratch on a small dense tensor type.

pub mod dataset;
pub mod error;
pub mod gradcheck;
pub mod image;
pub mod layers;
pub mod metrics;
pub mod net;
pub mod preprocess;
pub mod synthgen;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use net::{compute_gate, gate_decision, GateDecision, Level, MultiLevelNet, NetConfig};
pub use tensor::{finite_difference_grad, Rng, Shape, Tensor, RNG_ALGORITHM};
