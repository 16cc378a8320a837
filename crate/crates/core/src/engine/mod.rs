//! Small dense autodiff engine: layers with analytic backward passes, Adam
//! with per-element freezing, and flat parameter checkpoints.

pub mod adam;
pub mod attention;
pub mod checkpoint;
pub mod gradcheck;
pub mod layers;
pub mod loss;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use attention::{EncoderDims, EncoderLayer, MultiHeadAttention, NormPlacement};
pub use checkpoint::{Checkpoint, NamedTensor};
pub use layers::{Activation, AdaptiveAvgPool1d, Ctx, Dropout, FeedForward, Layer, LayerNorm, Linear, Mode};
pub use loss::{masked_softmax_xent, SoftmaxXent};
pub use tensor::{FreezeMask, Tensor};

#[cfg(test)]
mod gradient_suite;
