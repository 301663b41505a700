//! Train small fully-connected networks from scratch and measure how close
//! they come to being discontinuous.
//!
//! The crate is layered bottom-up:
//!
//! * [`tensor`], [`ops`] and [`tape`]: dense `f64` tensors and a
//!   define-by-run reverse-mode autodiff tape.
//! * [`data`]: IDX and CIFAR loaders, deduplication and a synthetic generator.
//! * [`model`], [`optim`], [`train`], [`diffusion`]: multilayer perceptrons
//!   and the four training loops (classifier, autoencoder, GAN, denoiser).
//! * [`metrics`]: the injectivity witness `d_m` and FGSM-vs-noise expansion
//!   ratio sweeps.
//! * [`bijection`]: bit-interleaving bijection between the unit square and
//!   the unit interval, with its boundary expansion ratios.
//! * [`checkpoint`] and [`experiment`]: persistence and the config-driven
//!   experiment runner used by the `discontinuity` binary.

pub mod bijection;
pub mod checkpoint;
pub mod data;
pub mod diffusion;
pub mod error;
pub mod experiment;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod optim;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use model::{DropoutMode, Model, ModelSpec};
pub use tensor::Tensor;
