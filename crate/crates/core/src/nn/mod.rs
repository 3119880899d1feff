//! Generators, discriminators and their building blocks.

mod im2col;
mod layers;
mod model;
mod networks;
mod params;
mod tensor;

pub use layers::{BlockSpec, Conv2d, InstanceNorm, Layer, PadMode, ResBlock, avg_pool2, leaky_relu, max_pool2, pad2d, reflect_index, same_padding, upsample2};
pub use model::{
    AutoEncoder, Codes, Critic, DISCRIMINATOR_KEYS, Direction, Duncan, GENERATOR_KEYS, NetworkConfig, TranslationBundle,
};
pub use networks::{ArtifactEncoder, ContentEncoder, Decoder, Discriminator};
pub use params::{Init, ParamStore, seeded};
pub use tensor::{slabs_to_tensor, tensor_to_slabs};
