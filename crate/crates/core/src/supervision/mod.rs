//! Training targets, the joint objective and segmentation metrics.

mod loss;
mod masks;
mod metrics;
pub mod png;

pub use loss::{bce_loss, joint_loss, JointLoss, LossWeights, TargetBatch};
pub use masks::{
    derive_body_mask, derive_edge_mask, gaussian_kernel, BodyConfig, CannyConfig, MaskConfig, MaskTriplet,
};
pub use metrics::{evaluate, sigmoid, Confusion, MeanMetrics, MetricsReport, MetricsSummary};
