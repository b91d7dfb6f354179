//! Dense ReLU networks trained with MSE and Adam, written against plain
//! row-major matrices.

mod adam;
mod checkpoint;
mod matrix;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use checkpoint::{
    load_checkpoint, save_checkpoint, Checkpoint, CheckpointMetadata, CHECKPOINT_FORMAT_VERSION,
};
pub use matrix::Matrix;
pub use mlp::{mse_loss, Activation, DenseLayer, ForwardCache, Gradients, LayerGradients, Mlp};
