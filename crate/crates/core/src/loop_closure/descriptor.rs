//! Polar intensity descriptor for place recognition.

use std::f64::consts::TAU;

use nalgebra::DMatrix;

use crate::error::{Result, SlamError};
use crate::frontend::AugmentedPoint;

/// Intensity normaliser applied to every bin sum.
pub const INTENSITY_DIVISOR: f64 = 20.0;

/// Ring × sector matrix of summed intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanContextDescriptor {
    pub data: DMatrix<f64>,
}

impl ScanContextDescriptor {
    pub fn zeros(n_ring: usize, n_sector: usize) -> Self {
        Self {
            data: DMatrix::zeros(n_ring, n_sector),
        }
    }

    pub fn n_ring(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_sector(&self) -> usize {
        self.data.ncols()
    }

    /// The descriptor with column `c` moved to `(c + shift) mod n_sector`.
    pub fn shifted(&self, shift: usize) -> Self {
        let n = self.n_sector();
        let mut data = DMatrix::zeros(self.n_ring(), n);
        for c in 0..n {
            data.set_column((c + shift) % n, &self.data.column(c));
        }
        Self { data }
    }
}

/// Bins points by range and bearing; points beyond `max_range` are dropped.
pub fn make_descriptor(points: &[AugmentedPoint], n_ring: usize, n_sector: usize, max_range: f64) -> ScanContextDescriptor {
    let mut d = ScanContextDescriptor::zeros(n_ring, n_sector);
    for p in points {
        let r = p.range();
        if !(r <= max_range) {
            continue;
        }
        let mut theta = p.bearing();
        if theta < 0.0 {
            theta += TAU;
        }
        let ring = ((r * n_ring as f64 / max_range) as usize).min(n_ring - 1);
        let sector = ((theta * n_sector as f64 / TAU) as usize).min(n_sector - 1);
        d.data[(ring, sector)] += p.p / INTENSITY_DIVISOR;
    }
    d
}

fn column_cosine_distance(a: &DMatrix<f64>, ca: usize, b: &DMatrix<f64>, cb: usize) -> Option<f64> {
    let (x, y) = (a.column(ca), b.column(cb));
    let nx = x.norm_squared();
    let ny = y.norm_squared();
    if nx == 0.0 || ny == 0.0 {
        return None;
    }
    // A single square root keeps identical columns at exactly zero distance.
    let cos = x.dot(&y) / (nx * ny).sqrt();
    Some((1.0 - cos).clamp(0.0, 1.0))
}

/// Minimum over column shifts of the mean column-wise cosine distance.
///
/// Returns the distance and the shift `s` at which it is attained: column `c`
/// of `a` is compared with column `(c + s) mod n` of `b`.
pub fn best_shift(a: &ScanContextDescriptor, b: &ScanContextDescriptor) -> Result<(f64, usize)> {
    if a.data.shape() != b.data.shape() {
        return Err(SlamError::DescriptorMismatch(a.data.shape(), b.data.shape()));
    }
    let n = a.n_sector();
    let mut best = (1.0, 0);
    for s in 0..n {
        let mut sum = 0.0;
        let mut valid = 0usize;
        for c in 0..n {
            if let Some(d) = column_cosine_distance(&a.data, c, &b.data, (c + s) % n) {
                sum += d;
                valid += 1;
            }
        }
        let d = if valid == 0 { 1.0 } else { sum / valid as f64 };
        if d < best.0 {
            best = (d, s);
        }
    }
    Ok(best)
}

/// Shift-invariant descriptor distance in `[0, 1]`.
pub fn descriptor_distance(a: &ScanContextDescriptor, b: &ScanContextDescriptor) -> Result<f64> {
    best_shift(a, b).map(|(d, _)| d)
}
