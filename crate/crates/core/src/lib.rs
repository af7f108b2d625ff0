//! Silhouette-based gait recognition. A 3D-convolutional network with
//! global+local feature extraction, temporal downsampling, generalized-mean
//! spatial pooling and per-strip embeddings, trained with a combined
//! batch-all triplet / label-smoothed cross-entropy loss and evaluated with
//! the cross-view rank-1 protocol.
//!
//! The crate is self-contained: dense 5-D tensors with reverse-mode
//! differentiation, the network layers, synthetic and on-disk silhouette
//! datasets, Adam training with checkpointing, and evaluation/reporting.

pub mod data;
pub mod error;
pub mod graph;
pub mod layers;
pub mod loss;
pub mod model;
pub mod ops;
pub mod scalar;
pub mod shape;
pub mod tensor;

pub use error::{Error, Result};
pub use graph::{GradGraph, GradStore, Var};
pub use ops::ConvSpec;
pub use scalar::Scalar;
pub use shape::{Axis, Shape5};
pub use tensor::Tensor5;
