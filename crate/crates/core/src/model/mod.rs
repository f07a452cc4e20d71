//! Convolutional encoders, residual decoder and sequence discriminator.

mod config;
mod layers;
mod seq2seq;

pub use config::{same_padding, CemConfig, HyperParams, KernelShape, LayerGeometry, ModelConfig};
pub use layers::{
    randomize, zero, BoundCem, BoundDecoder, BoundDiscriminator, BoundLinear, Cem, CodeOrigin, ConvLayer, Ctx, Decoder,
    Discriminator, HiddenCode, Linear, Parameters,
};
pub use seq2seq::{discriminate_sequences, BoundGenerator, Generator, MotionModel, Rollout, RolloutOptions};
