//! Rigid-body motions in the plane.
//!
//! [`Pose2`] stores the rotation as a 2×2 matrix so that augmented rotations
//! can be embedded directly into 3×3 covariance products. Tangent vectors are
//! ordered `[x, y, theta]`, translation first. Exp/Log and the Jacobians follow
//! the usual right-perturbation conventions: `X ⊕ δ = X · Exp(δ)`.

use std::f64::consts::PI;
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

/// Below this rotation magnitude Exp/Log switch to their series expansions.
pub const SMALL_ANGLE: f64 = 1e-7;

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    a
}

fn rotation(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// `sin(t)/t` and `(1 - cos(t))/t`, with the series branch near zero.
fn sinc_terms(theta: f64) -> (f64, f64) {
    if theta.abs() < SMALL_ANGLE {
        let t2 = theta * theta;
        (1.0 - t2 / 6.0, theta / 2.0 - theta * t2 / 24.0)
    } else {
        let h = (0.5 * theta).sin();
        (theta.sin() / theta, 2.0 * h * h / theta)
    }
}

/// `(t - sin t)/t^2` and `(1 - cos t)/t^2`.
fn jacobian_terms(theta: f64) -> (f64, f64) {
    let t2 = theta * theta;
    if theta.abs() < 1e-2 {
        (theta / 6.0 - theta * t2 / 120.0 + theta * t2 * t2 / 5040.0, 0.5 - t2 / 24.0 + t2 * t2 / 720.0)
    } else {
        let h = (0.5 * theta).sin();
        ((theta - theta.sin()) / t2, 2.0 * h * h / t2)
    }
}

/// A tangent vector of SE(2), also used for body-frame velocities.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Twist2 {
    pub vx: f64,
    pub vy: f64,
    pub omega: f64,
}

impl Twist2 {
    pub const fn new(vx: f64, vy: f64, omega: f64) -> Self {
        Self { vx, vy, omega }
    }

    pub const fn zero() -> Self {
        Self::new(0.0, 0.0, 0.0)
    }

    pub fn from_vector(v: &Vector3<f64>) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.vx, self.vy, self.omega)
    }

    pub fn scaled(self, s: f64) -> Self {
        Self::new(self.vx * s, self.vy * s, self.omega * s)
    }

    pub fn norm(self) -> f64 {
        self.to_vector().norm()
    }

    pub fn is_finite(self) -> bool {
        self.vx.is_finite() && self.vy.is_finite() && self.omega.is_finite()
    }
}

impl Add for Twist2 {
    type Output = Twist2;
    fn add(self, rhs: Twist2) -> Twist2 {
        Twist2::new(self.vx + rhs.vx, self.vy + rhs.vy, self.omega + rhs.omega)
    }
}

impl Sub for Twist2 {
    type Output = Twist2;
    fn sub(self, rhs: Twist2) -> Twist2 {
        Twist2::new(self.vx - rhs.vx, self.vy - rhs.vy, self.omega - rhs.omega)
    }
}

impl Neg for Twist2 {
    type Output = Twist2;
    fn neg(self) -> Twist2 {
        self.scaled(-1.0)
    }
}

impl Mul<f64> for Twist2 {
    type Output = Twist2;
    fn mul(self, rhs: f64) -> Twist2 {
        self.scaled(rhs)
    }
}

/// An element of SE(2).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Pose2 {
    rotation: Matrix2<f64>,
    translation: Vector2<f64>,
}

impl Default for Pose2 {
    fn default() -> Self {
        Self::identity()
    }
}

impl fmt::Display for Pose2 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({:.4}, {:.4}, {:.4} rad)", self.x(), self.y(), self.angle())
    }
}

impl Pose2 {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix2::identity(),
            translation: Vector2::zeros(),
        }
    }

    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        Self {
            rotation: rotation(theta),
            translation: Vector2::new(x, y),
        }
    }

    pub fn from_rotation(theta: f64) -> Self {
        Self::new(0.0, 0.0, theta)
    }

    pub fn from_translation(x: f64, y: f64) -> Self {
        Self::new(x, y, 0.0)
    }

    /// Builds a pose from a rotation matrix, re-orthonormalising it.
    pub fn from_parts(rotation: Matrix2<f64>, translation: Vector2<f64>) -> Self {
        Self {
            rotation: orthonormalize(&rotation),
            translation,
        }
    }

    pub fn rotation(&self) -> &Matrix2<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector2<f64> {
        &self.translation
    }

    pub fn x(&self) -> f64 {
        self.translation.x
    }

    pub fn y(&self) -> f64 {
        self.translation.y
    }

    /// Heading in `(-pi, pi]`.
    pub fn angle(&self) -> f64 {
        let a = self.rotation[(1, 0)].atan2(self.rotation[(0, 0)]);
        if a <= -PI {
            PI
        } else {
            a
        }
    }

    pub fn compose(&self, other: &Pose2) -> Pose2 {
        Pose2 {
            rotation: orthonormalize(&(self.rotation * other.rotation)),
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn inverse(&self) -> Pose2 {
        let rt = self.rotation.transpose();
        Pose2 {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self⁻¹ · other`: `other` expressed in the frame of `self`.
    pub fn between(&self, other: &Pose2) -> Pose2 {
        self.inverse().compose(other)
    }

    pub fn transform_point(&self, p: &Vector2<f64>) -> Vector2<f64> {
        self.rotation * p + self.translation
    }

    pub fn exp(xi: &Twist2) -> Pose2 {
        let (a, b) = sinc_terms(xi.omega);
        let v = Matrix2::new(a, -b, b, a);
        Pose2 {
            rotation: rotation(xi.omega),
            translation: v * Vector2::new(xi.vx, xi.vy),
        }
    }

    /// Inverse of [`Pose2::exp`]; the angle is returned in `(-pi, pi]`.
    pub fn log(&self) -> Twist2 {
        let theta = self.angle();
        let half = 0.5 * theta;
        let a = if theta.abs() < SMALL_ANGLE {
            1.0 - theta * theta / 12.0
        } else {
            half / half.tan()
        };
        let v_inv = Matrix2::new(a, half, -half, a);
        let rho = v_inv * self.translation;
        Twist2::new(rho.x, rho.y, theta)
    }

    /// `self · Exp(delta)`.
    pub fn retract(&self, delta: &Vector3<f64>) -> Pose2 {
        self.compose(&Pose2::exp(&Twist2::from_vector(delta)))
    }

    /// Adjoint matrix acting on `[x, y, theta]` tangent vectors.
    pub fn adjoint(&self) -> Matrix3<f64> {
        let r = &self.rotation;
        let t = &self.translation;
        Matrix3::new(
            r[(0, 0)],
            r[(0, 1)],
            t.y,
            r[(1, 0)],
            r[(1, 1)],
            -t.x,
            0.0,
            0.0,
            1.0,
        )
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.iter().all(|v| v.is_finite()) && self.translation.iter().all(|v| v.is_finite())
    }
}

impl Mul for Pose2 {
    type Output = Pose2;
    fn mul(self, rhs: Pose2) -> Pose2 {
        self.compose(&rhs)
    }
}

impl Mul<&Pose2> for &Pose2 {
    type Output = Pose2;
    fn mul(self, rhs: &Pose2) -> Pose2 {
        self.compose(rhs)
    }
}

fn orthonormalize(r: &Matrix2<f64>) -> Matrix2<f64> {
    let c = 0.5 * (r[(0, 0)] + r[(1, 1)]);
    let s = 0.5 * (r[(1, 0)] - r[(0, 1)]);
    let n = c.hypot(s);
    let (c, s) = (c / n, s / n);
    Matrix2::new(c, -s, s, c)
}

pub fn exp_map(xi: &Twist2) -> Pose2 {
    Pose2::exp(xi)
}

pub fn log_map(p: &Pose2) -> Twist2 {
    p.log()
}

pub fn compose(a: &Pose2, b: &Pose2) -> Pose2 {
    a.compose(b)
}

pub fn inverse(a: &Pose2) -> Pose2 {
    a.inverse()
}

pub fn between(a: &Pose2, b: &Pose2) -> Pose2 {
    a.between(b)
}

/// Right Jacobian: `Exp(xi + d) ≈ Exp(xi) · Exp(Jr(xi) d)`.
pub fn right_jacobian(xi: &Twist2) -> Matrix3<f64> {
    let (a, b) = sinc_terms(xi.omega);
    let (c1, c2) = jacobian_terms(xi.omega);
    let (r1, r2) = (xi.vx, xi.vy);
    Matrix3::new(
        a,
        b,
        r1 * c1 - r2 * c2,
        -b,
        a,
        r1 * c2 + r2 * c1,
        0.0,
        0.0,
        1.0,
    )
}

/// Left Jacobian: `Exp(xi + d) ≈ Exp(Jl(xi) d) · Exp(xi)`.
pub fn left_jacobian(xi: &Twist2) -> Matrix3<f64> {
    let (a, b) = sinc_terms(xi.omega);
    let (c1, c2) = jacobian_terms(xi.omega);
    let (r1, r2) = (xi.vx, xi.vy);
    Matrix3::new(
        a,
        -b,
        r1 * c1 + r2 * c2,
        b,
        a,
        -r1 * c2 + r2 * c1,
        0.0,
        0.0,
        1.0,
    )
}

fn invert_jacobian(j: &Matrix3<f64>) -> Matrix3<f64> {
    // [[M, v], [0, 1]] with M = [[a, b], [-b, a]] up to sign of b.
    let m = j.fixed_view::<2, 2>(0, 0).into_owned();
    let det = m.determinant();
    let m_inv = Matrix2::new(m[(1, 1)], -m[(0, 1)], -m[(1, 0)], m[(0, 0)]) / det;
    let v = Vector2::new(j[(0, 2)], j[(1, 2)]);
    let w = -(m_inv * v);
    Matrix3::new(
        m_inv[(0, 0)],
        m_inv[(0, 1)],
        w.x,
        m_inv[(1, 0)],
        m_inv[(1, 1)],
        w.y,
        0.0,
        0.0,
        1.0,
    )
}

pub fn right_jacobian_inv(xi: &Twist2) -> Matrix3<f64> {
    invert_jacobian(&right_jacobian(xi))
}

pub fn left_jacobian_inv(xi: &Twist2) -> Matrix3<f64> {
    invert_jacobian(&left_jacobian(xi))
}
