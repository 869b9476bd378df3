//! Axial self-attention and the residual blocks built from it.

mod axial;
mod blocks;

pub use axial::{attention_window, projection_bound, AxialAttention, Axis};
pub use blocks::{ConvResidualBlock, ResidualTransformerBlock, DEFAULT_BOTTLENECK};
