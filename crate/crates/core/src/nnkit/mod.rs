//! A small differentiable-layer toolkit: dense `f64` tensors, transformer
//! encoder layers with analytic backward passes, Adam, finite-difference
//! gradient checking and binary checkpoints.

pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod tensor;

pub use checkpoint::{decode_checkpoint, encode_checkpoint, restore};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use layers::{embed, embed_backward, sinusoidal_positions, Encoder, EncoderLayer, LayerNorm, Linear};
pub use optim::{adam_step, AdamConfig, AdamState};
pub use params::Params;
pub use tensor::{softmax_rows, Tensor};
