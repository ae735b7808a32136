//! Generator and discriminator topologies. Parameters live in a
//! [`ParamSet`](crate::tensor::ParamSet); forward passes are free functions
//! over a tape so the same code serves f32 training and f64 verification.

mod discriminator;
mod generator;
mod layers;

pub use discriminator::{
    build_discriminator, discriminator_forward, discriminator_logits, Discriminator, DiscriminatorConfig, LadderStep,
};
pub use generator::{build_generator, generator_forward, Generator, GeneratorConfig, OutputMapping, MIN_INPUT_SIZE};
pub use layers::{Mode, Pass};
