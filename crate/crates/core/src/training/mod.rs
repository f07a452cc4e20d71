//! Losses, optimizer, batching, checkpoints and the alternating training
//! loop.

mod adam;
mod batch;
mod checkpoint;
mod config;
mod gradient_check;
mod loss;
mod trainer;

pub use adam::{clip_global_norm, AdamState};
pub use batch::{Batch, BatchSampler};
pub use checkpoint::{Checkpoint, ValidationState};
pub use config::{Schedule, TrainConfig};
pub use gradient_check::{check_discriminator, check_generator, check_objective, CheckSetup, Objective};
pub use loss::{
    generator_objective, l2_penalty, loss_discriminator, loss_mse, neg_mean_log, GeneratorLoss, LossTerms, PROB_CLAMP,
};
pub use trainer::{
    discriminator_step, evaluation_mse, generator_step, iteration_rng, IterationRecord, RunSummary, Trainer,
};
