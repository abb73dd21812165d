#![allow(dead_code)]

use std::path::Path;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use radar_slam::harness::SyntheticWorld;
use radar_slam::Pose2;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_pose(rng: &mut impl Rng, span: f64) -> Pose2 {
    Pose2::new(rng.random_range(-span..span), rng.random_range(-span..span), rng.random_range(-3.1..3.1))
}

/// Random symmetric positive definite matrix with eigenvalues in `[lo, hi]`.
pub fn random_spd(rng: &mut impl Rng, lo: f64, hi: f64) -> Matrix3<f64> {
    let q = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0)).qr().q();
    let d = Vector3::from_fn(|_, _| rng.random_range(lo..hi));
    let m = q * Matrix3::from_diagonal(&d) * q.transpose();
    0.5 * (m + m.transpose())
}

/// Relative error with a floor on the denominator so that near-zero
/// gradients are compared absolutely.
pub fn rel_err(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().chain(numeric).map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
    diff / scale
}

/// A walled 12 m × 8 m room with two interior walls and a pillar.
pub const ROOM: &str = "\
    wall = -6 -4 6 -4 100 0
    wall = 6 -4 6 4 120 0
    wall = 6 4 -6 4 90 0
    wall = -6 4 -6 -4 150 0
    wall = -1 -4 -1 -1.5 200 0
    wall = 2 4 2 1 70 0
    wall = 3 -2 3.6 -2 180 0
    wall = 3.6 -2 3.6 -1.4 180 0
    beams = 400
    noise_returns = 0
    clutter_rate = 0
    range_sigma = 0
    duration = 0.1
";

pub fn room_world(extra: &str) -> SyntheticWorld {
    SyntheticWorld::parse(&format!("{ROOM}{extra}"), Path::new("room.world")).unwrap()
}
