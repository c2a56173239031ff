//! Attention-map-entropy active visual exploration.
//!
//! A small masked-autoencoder transformer observes an image through a
//! sequence of glimpses. Each next glimpse goes where the decoder's
//! self-attention rows are most uncertain.

pub mod data;
mod error;
pub mod eval;
pub mod glimpse;
pub mod gradcheck;
pub mod model;
mod par;
mod param;
pub mod rng;
mod scalar;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use par::{set_threads, Execution};
pub use param::{GradBuffer, Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
