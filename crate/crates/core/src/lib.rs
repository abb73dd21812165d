//! Radar SLAM on intensity-augmented Normal Distributions Transform submaps.
//!
//! The crate is organised bottom-up:
//!
//! * [`se2`] rigid-body algebra in the plane,
//! * [`frontend`] radar filtering and gyro integration,
//! * [`ndt`] intensity-augmented NDT grids and submaps,
//! * [`estimator`] sliding-window estimation under an annealed adaptive loss,
//! * [`loop_closure`] scan-context candidates and the divergence gate,
//! * [`pose_graph`] the global keyframe graph,
//! * [`pipeline`] the per-scan session that ties everything together,
//! * [`harness`] datasets, synthetic worlds and trajectory metrics.

// Negated comparisons below are deliberate: they reject NaN along with
// out-of-range values.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod error;
pub mod estimator;
pub mod frontend;
pub mod harness;
pub mod loop_closure;
pub mod ndt;
pub mod pipeline;
pub mod pose_graph;
pub mod se2;

pub use error::{Result, SlamError};
pub use estimator::{EstimatorConfig, WindowState};
pub use frontend::{AugmentedPoint, Beam, FilterConfig, ImuSegment, RadarReturn, RadarScan};
pub use harness::trajectory::Trajectory;
pub use ndt::{NdtCell, NdtGrid, NdtSubmap};
pub use pipeline::{ConfigPreset, ScanResult, SessionMode, SlamConfig, SlamSession};
pub use pose_graph::{Constraint, ConstraintKind, KeyframeNode, PoseGraph};
pub use se2::{Pose2, Twist2};
