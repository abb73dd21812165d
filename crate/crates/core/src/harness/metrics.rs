//! Trajectory error metrics: ATE, mean RPE and KITTI-style segment drift.
//!
//! Estimates are associated with ground truth by interpolating the estimate
//! at every ground-truth timestamp inside its time range.

use nalgebra::{Matrix2, Vector2};

use super::trajectory::Trajectory;
use crate::error::{Result, SlamError};
use crate::se2::Pose2;

/// KITTI segment lengths in meters.
pub const SEGMENT_LENGTHS: [f64; 8] = [100.0, 200.0, 300.0, 400.0, 500.0, 600.0, 700.0, 800.0];

/// `(gt, est)` pose pairs at the ground-truth timestamps covered by `est`.
pub fn associate(est: &Trajectory, gt: &Trajectory) -> Result<Vec<(Pose2, Pose2)>> {
    let pairs: Vec<_> = gt.iter().filter_map(|&(t, q)| est.interpolate(t).map(|p| (q, p))).collect();
    if pairs.is_empty() {
        return Err(SlamError::NoOverlap);
    }
    Ok(pairs)
}

/// Root-mean-square translation of `Q_i⁻¹ P_i`, without alignment.
pub fn ate(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let pairs = associate(est, gt)?;
    Ok(rmse(&pairs))
}

fn rmse(pairs: &[(Pose2, Pose2)]) -> f64 {
    let sum: f64 = pairs.iter().map(|(q, p)| q.between(p).translation().norm_squared()).sum();
    (sum / pairs.len() as f64).sqrt()
}

/// ATE after the rigid planar transform that best maps estimated positions
/// onto ground-truth positions in the least-squares sense.
pub fn ate_aligned(est: &Trajectory, gt: &Trajectory) -> Result<f64> {
    let pairs = associate(est, gt)?;
    let align = rigid_alignment(&pairs);
    let moved: Vec<_> = pairs.iter().map(|(q, p)| (*q, align.compose(p))).collect();
    Ok(rmse(&moved))
}

fn rigid_alignment(pairs: &[(Pose2, Pose2)]) -> Pose2 {
    let n = pairs.len() as f64;
    let mq = pairs.iter().fold(Vector2::zeros(), |a, (q, _)| a + q.translation()) / n;
    let mp = pairs.iter().fold(Vector2::zeros(), |a, (_, p)| a + p.translation()) / n;
    let mut cross = Matrix2::zeros();
    for (q, p) in pairs {
        cross += (q.translation() - mq) * (p.translation() - mp).transpose();
    }
    // Maximise tr(R ᵀ cross) over planar rotations.
    let theta = (cross[(1, 0)] - cross[(0, 1)]).atan2(cross[(0, 0)] + cross[(1, 1)]);
    let r = Pose2::from_rotation(theta);
    let t = mq - r.rotation() * mp;
    Pose2::new(t.x, t.y, theta)
}

/// Means of per-step relative translation error (m) and rotation error
/// (degrees).
pub fn mean_rpe(est: &Trajectory, gt: &Trajectory) -> Result<(f64, f64)> {
    let pairs = associate(est, gt)?;
    if pairs.len() < 2 {
        return Err(SlamError::NoOverlap);
    }
    let (mut t, mut r) = (0.0, 0.0);
    for w in pairs.windows(2) {
        let e = w[0].0.between(&w[1].0).between(&w[0].1.between(&w[1].1));
        t += e.translation().norm();
        r += e.angle().abs();
    }
    let n = (pairs.len() - 1) as f64;
    Ok((t / n, (r / n).to_degrees()))
}

/// Average translation drift (percent) and rotation drift (degrees per
/// 100 m) over all segments of 100 to 800 m, starting at every pose.
pub fn kitti_drift(est: &Trajectory, gt: &Trajectory) -> Result<(f64, f64)> {
    let pairs = associate(est, gt)?;
    let mut dist = vec![0.0; pairs.len()];
    for i in 1..pairs.len() {
        dist[i] = dist[i - 1] + (pairs[i].0.translation() - pairs[i - 1].0.translation()).norm();
    }
    let total = *dist.last().unwrap_or(&0.0);
    if total < SEGMENT_LENGTHS[0] {
        return Err(SlamError::TrajectoryTooShort(total));
    }
    let (mut t_sum, mut r_sum, mut count) = (0.0, 0.0, 0usize);
    for i in 0..pairs.len() {
        for &len in &SEGMENT_LENGTHS {
            let j = i + dist[i..].partition_point(|&d| d - dist[i] < len);
            if j >= pairs.len() {
                continue;
            }
            let e = pairs[i].0.between(&pairs[j].0).between(&pairs[i].1.between(&pairs[j].1));
            t_sum += e.translation().norm() / len;
            r_sum += e.angle().abs() / len;
            count += 1;
        }
    }
    if count == 0 {
        return Err(SlamError::TrajectoryTooShort(total));
    }
    let n = count as f64;
    Ok((100.0 * t_sum / n, (r_sum / n).to_degrees() * 100.0))
}
