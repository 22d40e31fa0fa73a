//! Two-stream vector-quantized audio/visual autoencoding with cross-modal
//! attention and hybrid contrastive learning, plus an autoregressive decoder
//! over multimodal token sequences.
//!
//! The crate is `no_std` (it needs `alloc`); file formats, checkpoints and the
//! command line live in the companion `svgen` crate.

#![no_std]

extern crate alloc;
#[cfg(test)]
extern crate std;

pub mod argen;
pub mod autodiff;
pub mod cam;
pub mod codec;
pub mod error;
pub mod gradcheck;
pub mod hcl;
pub mod nn;
pub mod optim;
pub mod oracles;
pub mod params;
pub mod quantizer;
pub mod seqfmt;
pub mod synthdata;
pub mod tensor;
pub mod train;

pub use autodiff::{Gradients, Tape, Var};
pub use error::{Error, Result};
pub use optim::Adam;
pub use params::{ParamId, ParamStore};
pub use tensor::Tensor;

/// The two media streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Modality {
    Visual,
    Audio,
}
