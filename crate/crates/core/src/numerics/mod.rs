//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Covers exactly what the convolutional autoencoders need: strided and
//! dilated causal 1-D convolution, pointwise nonlinearities, nearest-neighbor
//! upsampling, a Gaussian negative log-likelihood with learned variance, and
//! an adaptive-moment optimizer. Values are `f64` in memory; checkpoints are
//! 32-bit little-endian.

mod adam;
mod checkpoint;
mod graph;
mod tensor;

pub use adam::AdamState;
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use graph::{conv1d_out_len, Gradients, Graph, NodeId, VAR_MAX, VAR_MIN};
pub use tensor::Tensor;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NumericsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("non-finite values in {0}")]
    NonFinite(String),
    #[error("backward called before any forward pass")]
    BackwardBeforeForward,
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Uniform initialization in `±sqrt(1 / fan_in)`, rounded to `f32` precision.
pub fn init_uniform(shape: &[usize], fan_in: usize, rng: &mut ChaCha8Rng) -> Tensor {
    let bound = (1.0 / fan_in as f64).sqrt();
    let len: usize = shape.iter().product();
    let data: Vec<f64> = (0..len).map(|_| rng.gen_range(-bound..bound)).collect();
    let mut t = Tensor::from_vec(shape, data);
    t.quantize_f32();
    t
}
