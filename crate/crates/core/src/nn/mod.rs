//! Multi-input classifier: a 1D convolution stack over the local feature
//! matrix (coefficients as channels, frames as time) and a dense layer over
//! the global statistics, concatenated into a dense softmax head.

mod adam;
mod checkpoint;
mod model;

pub use adam::{adam_update, AdamConfig};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, load_checkpoint_expecting, save_checkpoint, FORMAT_VERSION,
};
pub use model::{
    argmax, softmax, BatchOutcome, Example, Gradients, Model, ModelConfig, Pass, Prediction, Standardization, Tensor, PROB_FLOOR,
};
