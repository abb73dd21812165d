//! Shared fixtures for the benchmarks.

use std::path::Path;

use radar_slam::frontend::{filter_scan, RadarScan};
use radar_slam::harness::{simulate, Dataset, SyntheticWorld};
use radar_slam::ndt::CellParams;
use radar_slam::{AugmentedPoint, NdtGrid, SlamConfig};

/// A furnished 12 m × 8 m room driven around once.
pub const ROOM: &str = "\
    wall = -6 -4 6 -4 100 0
    wall = 6 -4 6 4 120 0
    wall = 6 4 -6 4 90 0
    wall = -6 4 -6 -4 150 0
    wall = -1 -4 -1 -1.5 200 0
    wall = 2 4 2 1 70 0
    wall = 3 -2 3.6 -2 180 0
    wall = 3.6 -2 3.6 -1.4 180 0
    waypoint = -4.5 -3
    waypoint = 4.5 -3
    waypoint = 4.5 3
    waypoint = -4.5 3
    closed = true
    speed = 1
    path_length = 30
    imu_rate = 100
";

/// Simulated room drive with the given beam count per scan.
pub fn room_dataset(beams: usize) -> Dataset {
    let world = SyntheticWorld::parse(&format!("{ROOM}beams = {beams}\n"), Path::new("room.world")).expect("fixture world parses");
    simulate(&world, 1).expect("fixture world simulates")
}

/// Filtered points of one scan, intensity-scaled as the pipeline does it.
pub fn scaled_points(scan: &RadarScan, cfg: &SlamConfig) -> Vec<AugmentedPoint> {
    filter_scan(scan, &cfg.filter)
        .into_iter()
        .map(|p| AugmentedPoint::new(p.x, p.y, p.p * cfg.ndt.intensity_scale))
        .collect()
}

pub fn scan_ndt(scan: &RadarScan, cfg: &SlamConfig) -> NdtGrid {
    NdtGrid::from_points(&scaled_points(scan, cfg), cfg.ndt.resolution, CellParams::default())
}
