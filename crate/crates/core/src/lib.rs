//! A compact, dependency-light deep-learning engine built around the
//! involution operator: per-pixel dynamic kernels fused with a conventional
//! convolutional stack for binary image classification.
//!
//! The crate provides:
//!
//! - [`tensor`]: dense f64 NHWC tensors with deterministic initialization;
//! - [`involution`]: dynamic per-pixel kernel generation and application,
//!   with exact parameter accounting and a full manual backward pass;
//! - [`layers`]: convolution, max pooling, batch norm, dense, ReLU, dropout
//!   and softmax cross-entropy, all with analytic gradients;
//! - [`model`]: the hybrid / convolution-only / involution-only classifier
//!   variants, layer-by-layer summaries, and a binary model file format;
//! - [`train`]: Adam, the epoch loop, and evaluation metrics;
//! - [`data`]: image loading (PNG/PPM), resizing, splitting, augmentation,
//!   a synthetic gaze-pattern generator, and per-class mean-image analysis;
//! - [`viz`]: kernel-field visualizations and machine-readable reports.
//!
//! Everything is deterministic for a fixed master seed.

pub mod data;
pub mod error;
pub mod involution;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod testutil;
pub mod train;
pub mod viz;

pub use error::{Error, Result};
pub use layers::Mode;
pub use rng::Rng;
pub use tensor::Tensor;
