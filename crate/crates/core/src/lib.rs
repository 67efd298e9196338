//! Sparse key-triggered steganographic network.
//!
//! A single convolutional network is published as a denoiser whose smallest
//! kernel weights are pruned to zero. Filling those holes with weights drawn
//! from a secret key turns the same network into an image-hiding encoder, and
//! a second key into the matching decoder. The published container carries no
//! trace of either key.
//!
//! Modules, bottom up:
//! - [`netcore`]: network layout, parameter store, forward/backward passes.
//! - [`sparsity`]: initialization and the magnitude mask.
//! - [`keymat`]: keys, fill weights and triggering.
//! - [`container`]: the on-disk model format.
//! - [`datapipe`]: datasets, patch batches, quantization.
//! - [`trainer`]: joint masked training.
//! - [`metrics`]: PSNR, SSIM, APD, RMSE.
//! - [`modelsteg`]: weight-distribution distance, key leakage, denoising gap.
//! - [`surrogate`]: the desk-scale training and scoring protocol.

pub mod container;
pub mod datapipe;
pub mod error;
pub mod image;
pub mod keymat;
pub mod metrics;
pub mod modelsteg;
pub mod netcore;
pub mod rng;
pub mod sparsity;
pub mod surrogate;
pub mod trainer;

pub use container::{Metadata, ModelContainer};
pub use error::{Error, Result};
pub use image::ImagePlane;
pub use keymat::{trigger, Key, Mode};
pub use metrics::{evaluate_pair, QualityReport};
pub use netcore::{build_network, Executor, NetworkSpec, ParameterStore};
pub use sparsity::{generate_mask, init_weights, SparseMask};
pub use trainer::{train, TrainConfig, TrainKeys};
