//! One-shot architecture search over memory-bank networks.
//!
//! The crate is organized around five pieces:
//!
//! - [`tensor`]: a small dense-tensor engine with reverse-mode automatic
//!   differentiation, covering exactly the operations the pipeline needs.
//! - [`arch`]: the memory-bank search space — sampling, validation,
//!   one-hot encoding/decoding, perturbation, and canonical
//!   ResNet/DenseNet/FractalNet patterns.
//! - [`hypernet`]: the fully-convolutional DenseNet that maps an
//!   architecture encoding to the main network's 1x1 convolution weights.
//! - [`dynnet`]: instantiation and execution of a sampled architecture,
//!   mixing generated kernels with freely-learned shared convolutions.
//! - [`search`]: the training loop, candidate ranking, Markov-chain
//!   refinement, retraining, and the correlation/corruption diagnostics.
//!
//! The crate is `no_std` + `alloc`; all IO (datasets on disk, checkpoints,
//! the command line) lives in the companion `smash-cli` crate.

#![cfg_attr(not(test), no_std)]

extern crate alloc;

pub mod arch;
pub mod data;
pub mod dynnet;
pub mod error;
pub mod gradcheck;
pub mod hypernet;
pub mod optim;
pub mod scalar;
pub mod search;
pub mod tensor;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use tensor::Tensor;
