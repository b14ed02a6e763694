//! Pose error metrics and feature correlation analysis.

pub mod analysis;
pub mod metrics;
pub mod report;

pub use analysis::{last_conv_layer, stream_features};
pub use metrics::{mean_mpjpe, mpjpe, pcp, pearson_r2, procrustes_align, procrustes_transform, PcpScore, R2Matrix, Similarity};
pub use report::{evaluate, MetricReport};
