//! Differentiable tensor operations recorded on a [`crate::graph::GradGraph`].

pub mod conv;
pub mod elementwise;
pub mod linear;
pub mod reduce;

pub use conv::ConvSpec;
pub use linear::strip_weight_shape;
