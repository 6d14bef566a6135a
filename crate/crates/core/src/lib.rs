//! From-scratch deep-learning stack built around octave convolution and
//! octave transposed convolution, assembled into an encoder-decoder
//! (Octave UNet) for dense binary segmentation, with training, evaluation
//! and frequency-analysis tooling.

pub mod autograd;
pub mod checkpoint;
pub mod data;
pub mod error;
pub mod eval;
pub mod gradcheck;
pub mod nn;
pub mod octave;
pub mod ops;
pub mod reference;
pub mod spectral;
pub mod tensor;
pub mod train;
pub mod unet;

pub use error::{Error, Result};
pub use tensor::{Elem, Tensor};
