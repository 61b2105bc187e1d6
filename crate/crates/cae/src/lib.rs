//! Complex-valued convolutional autoencoder for unsupervised object discovery.
//!
//! The model runs a standard convolutional autoencoder over complex-valued
//! activations: magnitudes carry feature strength, relative phases carry
//! object identity. Training is plain reconstruction (MSE between the input
//! image and the decoded magnitudes); after training, clustering the output
//! phases yields object segmentation masks with no supervision.
//!
//! Module map:
//! - [`tensor`]: dense real/complex tensors and polar conversions
//! - [`autodiff`]: reverse-mode tape over real tensor primitives
//! - [`layers`]: complex layers (shared weights, magnitude/phase biases,
//!   magnitude gating, phase-preserving activation)
//! - [`model`]: the full encoder/decoder assembly and checkpoint format
//! - [`data`]: procedural multi-object datasets, MNIST ingestion, binary
//!   dataset files
//! - [`train`]: Adam with linear warmup, the training loop
//! - [`eval`]: phase clustering, ARI metrics, rotation-equivariance harness,
//!   object-wise reconstruction, phase-map rendering
//! - [`cli`]: the `cae` command-line tool

pub mod autodiff;
pub mod cli;
pub mod data;
pub mod error;
pub mod eval;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;

pub use error::{CaeError, Result};
pub use tensor::{ComplexTensor, RealTensor};
