//! Evaluation harness: dataset files, synthetic worlds and trajectory
//! metrics.

pub mod dataset;
pub mod metrics;
pub mod sim;
pub mod trajectory;

pub use dataset::{load_dataset, write_dataset, Dataset};
pub use metrics::{ate, ate_aligned, kitti_drift, mean_rpe};
pub use sim::{simulate, SyntheticWorld};
pub use trajectory::Trajectory;
