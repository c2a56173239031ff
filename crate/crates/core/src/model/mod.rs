//! Masked autoencoder with attention capture.

pub mod checkpoint;
mod config;
mod layers;
mod mae;
pub(crate) mod patches;
mod posembed;

pub use config::{EntropySource, ModelConfig, Task};
pub use layers::{Block, HeadTensors, LayerNorm, Linear, MultiHeadAttention};
pub use mae::{
    AttentionCapture, ClassHead, Decoded, EncodeOptions, Encoded, Inference, MaeModel, Visible, CLASS_HEAD_PREFIX,
};
pub use patches::{patchify, unpatchify};
pub use posembed::sincos_2d;
