//! Multi-branch hybrid transformer network for cell-border segmentation.

pub mod attention;
pub mod data;
pub mod error;
pub mod kv;
pub mod model;
pub mod nn;
pub mod plane;
pub mod supervision;
pub mod tensor;
pub mod trainer;

pub use error::{Error, Result};
