//! The full classifier: configuration, parameters, passes, optimizer,
//! training, checkpoints and the finite-difference gradient checker.

mod adam;
pub mod checkpoint;
mod config;
pub mod gradcheck;
mod loss;
pub mod network;
mod params;
mod train;

pub use adam::{adam_step, AdamState};
pub use checkpoint::{
    decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use config::{ModelConfig, TrainConfig};
pub use gradcheck::{gradient_check, Fault, GradCheckOptions, GradCheckReport};
pub use loss::{sparse_categorical_crossentropy, PROB_FLOOR};
pub use network::{backward, forward, ForwardCache};
pub use params::{Gradients, ModelParams, ParamTensors, GROUP_NAMES};
pub use train::{
    argmax, evaluate, predict, predict_batch, train, train_step, train_with, EpochRecord, Prediction, TrainHistory,
};
