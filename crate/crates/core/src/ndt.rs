//! Intensity-augmented Normal Distributions Transform.
//!
//! Every cell keeps exact sufficient statistics (count, sum, sum of outer
//! products) so that merging new scans into a submap reproduces the batch
//! sample statistics of all points ever inserted.

use std::collections::BTreeMap;
use std::io::{self, Write};

use nalgebra::{Matrix3, SymmetricEigen, Vector2, Vector3};

use crate::error::{Result, SlamError};
use crate::frontend::AugmentedPoint;
use crate::se2::Pose2;

/// Minimum samples for a cell to take part in matching.
pub const DEFAULT_MIN_POINTS: usize = 3;
/// Eigenvalues are floored at this fraction of the largest one.
pub const DEFAULT_EIGEN_FLOOR_RATIO: f64 = 1e-3;
/// Absolute eigenvalue floor so that degenerate cells stay positive definite.
const ABSOLUTE_EIGEN_FLOOR: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellParams {
    pub min_points: usize,
    pub eigen_floor_ratio: f64,
}

impl Default for CellParams {
    fn default() -> Self {
        Self {
            min_points: DEFAULT_MIN_POINTS,
            eigen_floor_ratio: DEFAULT_EIGEN_FLOOR_RATIO,
        }
    }
}

/// Sufficient statistics of a point set.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CellStats {
    pub count: usize,
    pub sum: Vector3<f64>,
    pub outer_sum: Matrix3<f64>,
}

impl Default for CellStats {
    fn default() -> Self {
        Self {
            count: 0,
            sum: Vector3::zeros(),
            outer_sum: Matrix3::zeros(),
        }
    }
}

impl CellStats {
    pub fn push(&mut self, v: &Vector3<f64>) {
        self.count += 1;
        self.sum += v;
        self.outer_sum += v * v.transpose();
    }

    pub fn from_points<'a>(points: impl IntoIterator<Item = &'a AugmentedPoint>) -> Self {
        let mut s = Self::default();
        for p in points {
            s.push(&Vector3::new(p.x, p.y, p.p));
        }
        s
    }

    pub fn merged(&self, other: &CellStats) -> CellStats {
        CellStats {
            count: self.count + other.count,
            sum: self.sum + other.sum,
            outer_sum: self.outer_sum + other.outer_sum,
        }
    }

    pub fn mean(&self) -> Vector3<f64> {
        if self.count == 0 {
            Vector3::zeros()
        } else {
            self.sum / self.count as f64
        }
    }

    /// Unbiased sample covariance (divisor `count - 1`); zero below two samples.
    pub fn sample_covariance(&self) -> Matrix3<f64> {
        if self.count < 2 {
            return Matrix3::zeros();
        }
        let n = self.count as f64;
        let mean = self.sum / n;
        let c = (self.outer_sum - n * mean * mean.transpose()) / (n - 1.0);
        0.5 * (c + c.transpose())
    }
}

/// Floors the eigenvalues of a symmetric matrix at `ratio` times the largest.
pub fn regularize_covariance(cov: &Matrix3<f64>, ratio: f64) -> Matrix3<f64> {
    let eig = SymmetricEigen::new(*cov);
    let largest = eig.eigenvalues.max().max(0.0);
    let floor = (ratio * largest).max(ABSOLUTE_EIGEN_FLOOR);
    let clamped = eig.eigenvalues.map(|l| l.max(floor));
    let r = eig.eigenvectors * Matrix3::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    0.5 * (r + r.transpose())
}

/// One Gaussian of an NDT grid over `(x, y, intensity)`.
#[derive(Clone, Debug, PartialEq)]
pub struct NdtCell {
    pub stats: CellStats,
    pub mean: Vector3<f64>,
    /// Regularised covariance, strictly positive definite.
    pub covariance: Matrix3<f64>,
    pub usable: bool,
}

impl NdtCell {
    pub fn empty() -> Self {
        Self::from_stats(CellStats::default(), &CellParams::default())
    }

    pub fn from_stats(stats: CellStats, params: &CellParams) -> Self {
        let mean = stats.mean();
        let covariance = regularize_covariance(&stats.sample_covariance(), params.eigen_floor_ratio);
        NdtCell {
            stats,
            mean,
            covariance,
            usable: stats.count >= params.min_points.max(2),
        }
    }

    pub fn count(&self) -> usize {
        self.stats.count
    }

    pub fn sample_covariance(&self) -> Matrix3<f64> {
        self.stats.sample_covariance()
    }

    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.mean.x, self.mean.y)
    }

    /// Folds new sufficient statistics into the cell.
    pub fn recursive_update(&self, incoming: &CellStats, params: &CellParams) -> NdtCell {
        if incoming.count == 0 {
            return self.clone();
        }
        NdtCell::from_stats(self.stats.merged(incoming), params)
    }
}

/// Integer grid coordinates, ordered lexicographically.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct CellIndex {
    pub ix: i64,
    pub iy: i64,
}

impl CellIndex {
    pub fn of(x: f64, y: f64, resolution: f64) -> Self {
        CellIndex {
            ix: (x / resolution).floor() as i64,
            iy: (y / resolution).floor() as i64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NdtGrid {
    pub resolution: f64,
    pub params: CellParams,
    cells: BTreeMap<CellIndex, NdtCell>,
    usable: usize,
    bounds: Option<(CellIndex, CellIndex)>,
}

/// Builds an NDT with default cell parameters.
pub fn build_ndt(points: &[AugmentedPoint], resolution: f64) -> NdtGrid {
    NdtGrid::from_points(points, resolution, CellParams::default())
}

impl NdtGrid {
    pub fn new(resolution: f64, params: CellParams) -> Self {
        assert!(resolution > 0.0, "NDT resolution must be positive");
        NdtGrid {
            resolution,
            params,
            cells: BTreeMap::new(),
            usable: 0,
            bounds: None,
        }
    }

    pub fn from_points(points: &[AugmentedPoint], resolution: f64, params: CellParams) -> Self {
        let mut grid = NdtGrid::new(resolution, params);
        grid.insert_points(points.iter().copied());
        grid
    }

    /// Routes points to their cells and merges them in.
    pub fn insert_points(&mut self, points: impl IntoIterator<Item = AugmentedPoint>) {
        let mut binned: BTreeMap<CellIndex, CellStats> = BTreeMap::new();
        for p in points {
            binned
                .entry(CellIndex::of(p.x, p.y, self.resolution))
                .or_default()
                .push(&Vector3::new(p.x, p.y, p.p));
        }
        for (idx, stats) in binned {
            self.merge_stats(idx, &stats);
        }
    }

    pub fn merge_stats(&mut self, idx: CellIndex, stats: &CellStats) {
        if stats.count == 0 {
            return;
        }
        let params = self.params;
        let cell = self.cells.entry(idx).or_insert_with(NdtCell::empty);
        let was_usable = cell.usable;
        *cell = cell.recursive_update(stats, &params);
        if cell.usable && !was_usable {
            self.usable += 1;
        }
        self.bounds = Some(match self.bounds {
            None => (idx, idx),
            Some((lo, hi)) => (
                CellIndex {
                    ix: lo.ix.min(idx.ix),
                    iy: lo.iy.min(idx.iy),
                },
                CellIndex {
                    ix: hi.ix.max(idx.ix),
                    iy: hi.iy.max(idx.iy),
                },
            ),
        });
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn usable_count(&self) -> usize {
        self.usable
    }

    pub fn get(&self, idx: &CellIndex) -> Option<&NdtCell> {
        self.cells.get(idx)
    }

    pub fn cells(&self) -> impl Iterator<Item = (&CellIndex, &NdtCell)> {
        self.cells.iter()
    }

    pub fn usable_cells(&self) -> impl Iterator<Item = (&CellIndex, &NdtCell)> {
        self.cells.iter().filter(|(_, c)| c.usable)
    }

    /// The `k` usable cells whose geometric means are closest to `query`.
    ///
    /// Searches square rings of cells around the query's cell. A cell in ring
    /// `d` cannot be closer than `(d - 1) * resolution`, so the search stops
    /// once the k-th best distance is below that bound for the next ring.
    pub fn nearest(&self, query: &Vector2<f64>, k: usize) -> Vec<(CellIndex, &NdtCell)> {
        let Some((lo, hi)) = self.bounds else {
            return Vec::new();
        };
        if k == 0 || self.usable == 0 {
            return Vec::new();
        }
        let center = CellIndex::of(query.x, query.y, self.resolution);
        let max_ring = [
            (center.ix - lo.ix).abs(),
            (hi.ix - center.ix).abs(),
            (center.iy - lo.iy).abs(),
            (hi.iy - center.iy).abs(),
        ]
        .into_iter()
        .max()
        .unwrap_or(0);

        let mut found: Vec<(f64, CellIndex, &NdtCell)> = Vec::new();
        let mut ring_cells = Vec::new();
        for ring in 0..=max_ring {
            ring_cells.clear();
            if ring == 0 {
                ring_cells.push(center);
            } else {
                for dx in -ring..=ring {
                    ring_cells.push(CellIndex { ix: center.ix + dx, iy: center.iy - ring });
                    ring_cells.push(CellIndex { ix: center.ix + dx, iy: center.iy + ring });
                }
                for dy in (-ring + 1)..ring {
                    ring_cells.push(CellIndex { ix: center.ix - ring, iy: center.iy + dy });
                    ring_cells.push(CellIndex { ix: center.ix + ring, iy: center.iy + dy });
                }
            }
            for idx in &ring_cells {
                if let Some(cell) = self.cells.get(idx).filter(|c| c.usable) {
                    found.push(((cell.xy() - query).norm_squared(), *idx, cell));
                }
            }
            if found.len() >= k {
                found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                let bound = ring as f64 * self.resolution;
                if found[k - 1].0 <= bound * bound {
                    break;
                }
            }
        }
        found.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        found.truncate(k);
        found.into_iter().map(|(_, i, c)| (i, c)).collect()
    }

    /// Usable cells as an equally weighted Gaussian mixture.
    pub fn as_gmm(&self) -> Result<Vec<GmmComponent>> {
        if self.usable == 0 {
            return Err(SlamError::NoUsableCells);
        }
        let w = 1.0 / self.usable as f64;
        Ok(self
            .usable_cells()
            .map(|(_, c)| GmmComponent {
                weight: w,
                mean: c.mean,
                covariance: c.covariance,
            })
            .collect())
    }

    /// Tab-separated dump: index, count, mean, row-major covariance.
    pub fn write_debug_table<W: Write>(&self, mut w: W) -> io::Result<()> {
        for (idx, cell) in &self.cells {
            write!(w, "{}\t{}\t{}", idx.ix, idx.iy, cell.count())?;
            for v in cell.mean.iter() {
                write!(w, "\t{v:.8e}")?;
            }
            for r in 0..3 {
                for c in 0..3 {
                    write!(w, "\t{:.8e}", cell.covariance[(r, c)])?;
                }
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

pub fn nearest_distributions<'a>(query_mean: &Vector3<f64>, target: &'a NdtGrid, k: usize) -> Vec<(CellIndex, &'a NdtCell)> {
    target.nearest(&Vector2::new(query_mean.x, query_mean.y), k)
}

pub fn cells_as_gmm(grid: &NdtGrid) -> Result<Vec<GmmComponent>> {
    grid.as_gmm()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GmmComponent {
    pub weight: f64,
    pub mean: Vector3<f64>,
    pub covariance: Matrix3<f64>,
}

/// An accumulating map anchored at a keyframe pose.
#[derive(Clone, Debug)]
pub struct NdtSubmap {
    pub id: usize,
    pub grid: NdtGrid,
    /// Global pose of the submap frame.
    pub root_pose: Pose2,
    /// Keyframes whose scans were accumulated; the first one is the root.
    pub keyframe_ids: Vec<usize>,
}

impl NdtSubmap {
    pub fn new(id: usize, root_pose: Pose2, resolution: f64, params: CellParams) -> Self {
        NdtSubmap {
            id,
            grid: NdtGrid::new(resolution, params),
            root_pose,
            keyframe_ids: Vec::new(),
        }
    }

    pub fn root_keyframe(&self) -> Option<usize> {
        self.keyframe_ids.first().copied()
    }

    /// Transforms the geometric part of `points` into the root frame and
    /// merges them; intensities pass through unchanged.
    pub fn insert_scan(&mut self, points: &[AugmentedPoint], pose_in_root: &Pose2) {
        let moved = points.iter().map(|p| {
            let q = pose_in_root.transform_point(&p.xy());
            AugmentedPoint::new(q.x, q.y, p.p)
        });
        self.grid.insert_points(moved);
    }
}
