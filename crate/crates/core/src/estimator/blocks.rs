//! Residual blocks of the sliding-window problem with analytic Jacobians.
//!
//! Every state contributes seven local parameters, in this order: pose
//! tangent `[x, y, theta]` (right perturbation), velocity `[vx, vy, omega]`,
//! gyro bias.

use nalgebra::{Matrix3, SMatrix, SVector, Vector2, Vector3};

use crate::error::{Result, SlamError};
use crate::frontend::ImuSegment;
use crate::ndt::NdtCell;
use crate::se2::{left_jacobian_inv, right_jacobian, right_jacobian_inv, wrap_angle, Pose2, Twist2};

use super::WindowState;

pub const STATE_DIM: usize = 7;

pub type Vector6 = SVector<f64, 6>;
pub type Matrix6 = SMatrix<f64, 6, 6>;
pub type Matrix6x7 = SMatrix<f64, 6, STATE_DIM>;
pub type Matrix2x7 = SMatrix<f64, 2, STATE_DIM>;

/// Mean and covariance of one augmented NDT cell.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Gaussian3 {
    pub mean: Vector3<f64>,
    pub cov: Matrix3<f64>,
}

impl From<&NdtCell> for Gaussian3 {
    fn from(c: &NdtCell) -> Self {
        Gaussian3 {
            mean: c.mean,
            cov: c.covariance,
        }
    }
}

/// Embeds a planar rotation into the augmented 3×3 form.
fn augmented(r: &nalgebra::Matrix2<f64>) -> Matrix3<f64> {
    Matrix3::new(r[(0, 0)], r[(0, 1)], 0.0, r[(1, 0)], r[(1, 1)], 0.0, 0.0, 0.0, 1.0)
}

/// Derivative generator of the augmented rotation: `dR~/dtheta = R~ G`.
fn generator() -> Matrix3<f64> {
    Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0)
}

/// Squared Mahalanobis distance between a scan cell moved by `pose` and a
/// map cell, using the combined covariance `Σ_map + R~ Σ_scan R~ᵀ`.
pub fn ndt_residual(scan_cell: &NdtCell, map_cell: &NdtCell, pose: &Pose2) -> Result<f64> {
    ndt_r2(&scan_cell.into(), &map_cell.into(), pose)
}

pub fn ndt_r2(scan: &Gaussian3, map: &Gaussian3, pose: &Pose2) -> Result<f64> {
    let r = augmented(pose.rotation());
    let t = Vector3::new(pose.x(), pose.y(), 0.0);
    let d = r * scan.mean + t - map.mean;
    let c = map.cov + r * scan.cov * r.transpose();
    let chol = c.cholesky().ok_or(SlamError::SingularCovariance)?;
    Ok(d.dot(&chol.solve(&d)).max(0.0))
}

/// Linearisation of one NDT correspondence.
#[derive(Clone, Copy, Debug)]
pub struct NdtLinearization {
    pub r2: f64,
    /// Exact gradient of `r2` with respect to the pose perturbation.
    pub gradient: Vector3<f64>,
    /// Gauss-Newton curvature `2 Jᵀ C⁻¹ J` with the covariance held fixed.
    pub gn_hessian: Matrix3<f64>,
}

pub fn ndt_linearize(scan: &Gaussian3, map: &Gaussian3, pose: &Pose2) -> Result<NdtLinearization> {
    let r = augmented(pose.rotation());
    let g = generator();
    let t = Vector3::new(pose.x(), pose.y(), 0.0);
    let d = r * scan.mean + t - map.mean;
    let rs = r * scan.cov * r.transpose();
    let c = map.cov + rs;
    let c_inv = c.try_inverse().ok_or(SlamError::SingularCovariance)?;
    let c_inv = 0.5 * (c_inv + c_inv.transpose());
    let u = c_inv * d;
    let r2 = d.dot(&u).max(0.0);

    // dd/d(delta): translation columns are R~[:, :2], rotation column R~ G mu.
    let mut jd = Matrix3::zeros();
    jd.fixed_view_mut::<3, 2>(0, 0).copy_from(&r.fixed_view::<3, 2>(0, 0));
    jd.set_column(2, &(r * g * scan.mean));
    let dc_dtheta = r * g * scan.cov * r.transpose() + r * scan.cov * g.transpose() * r.transpose();

    let mut gradient = 2.0 * jd.transpose() * u;
    gradient[2] -= u.dot(&(dc_dtheta * u));
    let gn_hessian = 2.0 * jd.transpose() * c_inv * jd;
    Ok(NdtLinearization { r2, gradient, gn_hessian })
}

/// Pose predicted by the constant-velocity motion model.
pub fn predict_pose(prev: &WindowState, dt: f64) -> Pose2 {
    prev.pose.compose(&Pose2::exp(&prev.velocity.scaled(dt)))
}

/// Motion-model residual `[Log(T̂⁻¹ T); v - v_prev]` and its Jacobians with
/// respect to the previous and current state.
pub fn motion_residual(prev: &WindowState, cur: &WindowState) -> (Vector6, Matrix6x7, Matrix6x7) {
    let dt = cur.timestamp - prev.timestamp;
    let u = prev.velocity.scaled(dt);
    let step = Pose2::exp(&u);
    let predicted = prev.pose.compose(&step);
    let e_pose = predicted.between(&cur.pose).log();
    let e_vel = cur.velocity - prev.velocity;

    let mut e = Vector6::zeros();
    e.fixed_rows_mut::<3>(0).copy_from(&e_pose.to_vector());
    e.fixed_rows_mut::<3>(3).copy_from(&e_vel.to_vector());

    let jl_inv = left_jacobian_inv(&e_pose);
    let mut j_prev = Matrix6x7::zeros();
    j_prev
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&(-jl_inv * step.inverse().adjoint()));
    j_prev
        .fixed_view_mut::<3, 3>(0, 3)
        .copy_from(&(-jl_inv * right_jacobian(&u) * dt));
    j_prev.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-Matrix3::identity()));

    let mut j_cur = Matrix6x7::zeros();
    j_cur
        .fixed_view_mut::<3, 3>(0, 0)
        .copy_from(&right_jacobian_inv(&e_pose));
    j_cur.fixed_view_mut::<3, 3>(3, 3).copy_from(&Matrix3::identity());
    (e, j_prev, j_cur)
}

pub fn motion_cost(prev: &WindowState, cur: &WindowState, omega_mm: &Matrix6) -> f64 {
    let (e, _, _) = motion_residual(prev, cur);
    e.dot(&(omega_mm * e))
}

/// IMU residual `[angle((R_prev ΔR Exp(b Δt))⁻¹ R); b - b_prev]`.
pub fn imu_residual(prev: &WindowState, cur: &WindowState, seg: &ImuSegment) -> (Vector2<f64>, Matrix2x7, Matrix2x7) {
    let predicted = prev.pose.angle() + seg.delta_rotation + prev.bias * seg.dt;
    let e = Vector2::new(wrap_angle(cur.pose.angle() - predicted), cur.bias - prev.bias);
    let mut j_prev = Matrix2x7::zeros();
    j_prev[(0, 2)] = -1.0;
    j_prev[(0, 6)] = -seg.dt;
    j_prev[(1, 6)] = -1.0;
    let mut j_cur = Matrix2x7::zeros();
    j_cur[(0, 2)] = 1.0;
    j_cur[(1, 6)] = 1.0;
    (e, j_prev, j_cur)
}

pub fn imu_cost(prev: &WindowState, cur: &WindowState, seg: &ImuSegment, omega_imu: &nalgebra::Matrix2<f64>) -> f64 {
    let (e, _, _) = imu_residual(prev, cur, seg);
    e.dot(&(omega_imu * e))
}

/// Applies a local 7-vector increment to a state.
pub fn retract_state(s: &WindowState, delta: &[f64]) -> WindowState {
    WindowState {
        pose: s.pose.retract(&Vector3::new(delta[0], delta[1], delta[2])),
        velocity: s.velocity + Twist2::new(delta[3], delta[4], delta[5]),
        bias: s.bias + delta[6],
        timestamp: s.timestamp,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndt::{CellParams, CellStats};
    use std::f64::consts::PI;

    fn state(x: f64, y: f64, th: f64, v: Twist2, b: f64, t: f64) -> WindowState {
        WindowState {
            pose: Pose2::new(x, y, th),
            velocity: v,
            bias: b,
            timestamp: t,
        }
    }

    fn gaussian(mean: Vector3<f64>, cov: Matrix3<f64>) -> Gaussian3 {
        Gaussian3 { mean, cov }
    }

    #[test]
    fn ndt_residual_examples() {
        let g = gaussian(Vector3::new(1.0, 2.0, 50.0), Matrix3::identity());
        assert_eq!(ndt_r2(&g, &g, &Pose2::identity()).unwrap(), 0.0);

        let shifted = gaussian(Vector3::new(1.0, 2.0, 51.0), Matrix3::identity());
        assert!((ndt_r2(&g, &shifted, &Pose2::identity()).unwrap() - 0.5).abs() < 1e-15);

        let r2 = ndt_r2(&g, &g, &Pose2::from_translation(1.0, 0.0)).unwrap();
        assert!((r2 - 0.5).abs() < 1e-15);

        let params = CellParams::default();
        let cell = NdtCell::from_stats(CellStats::default(), &params);
        assert!(ndt_residual(&cell, &cell, &Pose2::identity()).is_ok());
    }

    #[test]
    fn motion_examples() {
        let omega = Matrix6::identity();
        let v = Twist2::new(0.5, 0.0, 0.2);
        let prev = state(1.0, 2.0, 0.3, v, 0.0, 0.0);
        let pred = predict_pose(&prev, 0.2);
        let cur = WindowState {
            pose: pred,
            velocity: v,
            bias: 0.0,
            timestamp: 0.2,
        };
        assert!(motion_cost(&prev, &cur, &omega) < 1e-24);

        let eps = 0.03;
        let off = WindowState {
            pose: pred.compose(&Pose2::from_translation(eps, 0.0)),
            ..cur
        };
        assert!((motion_cost(&prev, &off, &omega) - eps * eps).abs() < 1e-12);

        let faster = WindowState {
            velocity: v + Twist2::new(0.1, 0.0, 0.0),
            ..cur
        };
        assert!((motion_cost(&prev, &faster, &omega) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn imu_examples() {
        let omega = nalgebra::Matrix2::identity();
        let seg = ImuSegment {
            delta_rotation: 0.25,
            dt: 0.2,
        };
        let prev = state(0.0, 0.0, 0.4, Twist2::zero(), 0.0, 0.0);
        let cur = state(1.0, 0.0, 0.65, Twist2::zero(), 0.0, 0.2);
        assert!(imu_cost(&prev, &cur, &seg, &omega) < 1e-24);

        let off = state(1.0, 0.0, 0.75, Twist2::zero(), 0.0, 0.2);
        assert!((imu_cost(&prev, &off, &seg, &omega) - 0.01).abs() < 1e-12);

        let prev_b = state(0.0, 0.0, 0.4, Twist2::zero(), 0.02, 0.0);
        let cur_b = state(1.0, 0.0, 0.654, Twist2::zero(), 0.025, 0.2);
        let (e, _, _) = imu_residual(&prev_b, &cur_b, &seg);
        assert!(e[0].abs() < 1e-12);
        assert!((e[1] - 0.005).abs() < 1e-15);

        // Wrapping across pi.
        let a = state(0.0, 0.0, PI - 0.05, Twist2::zero(), 0.0, 0.0);
        let b = state(0.0, 0.0, -PI + 0.05, Twist2::zero(), 0.0, 0.2);
        let seg = ImuSegment { delta_rotation: 0.1, dt: 0.2 };
        assert!(imu_residual(&a, &b, &seg).0[0].abs() < 1e-12);
    }
}
