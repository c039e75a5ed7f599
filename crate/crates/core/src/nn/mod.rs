//! Tensor math, the residual detector, loss, optimizer and training loop.

mod adam;
mod checkpoint;
mod conv;
mod loss;
mod model;
mod real;
mod tensor;
mod train;

pub use adam::{adam_step, AdamConfig, AdamState, DEFAULT_LEARNING_RATE};
pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC};
pub use conv::{conv2d_backward, conv2d_forward, ConvGeometry, ConvGrads};
pub use loss::{bce_loss, sigmoid, BceOutput};
pub use model::{parameter_layout, DetectorModel, Gradients, Param, ARCHITECTURE, INPUT_CHANNELS};
pub use real::Real;
pub use tensor::Tensor4;
pub use train::{
    collect_features, history_csv, predict, train, EpochRecord, TrainConfig, TrainOutcome,
    DEFAULT_BATCH_SIZE,
};
