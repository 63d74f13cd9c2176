//! Objective, hand-derived gradients, AdamW and the training loop.

mod backward;
mod loss;
mod optim;
mod train;

pub use backward::{backward, GradientSet};
pub use loss::{
    objective, output_penalty, sigmoid, task_loss, task_loss_grad, variation_penalty, LossParts, LossWeights,
};
pub use optim::{adamw_step, cosine_lr, AdamState, ADAM_EPS, BETA1, BETA2};
pub use train::{evaluate, seed_offsets, train, EpochLog, TrainConfig, TrainingLog};
