//! On-disk dataset layout.
//!
//! A dataset directory holds `scans.csv` (`timestamp,azimuth_rad,range_m,intensity`,
//! one row per return), optionally `imu.csv` (`timestamp,yaw_rate_rad_s`) and
//! optionally `gt.tum`. Rows of one scan share a timestamp; rows of one beam
//! share an azimuth and are consecutive.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::trajectory::Trajectory;
use crate::error::{Result, SlamError};
use crate::frontend::{Beam, GyroSample, RadarReturn, RadarScan};

pub const SCANS_FILE: &str = "scans.csv";
pub const IMU_FILE: &str = "imu.csv";
pub const GT_FILE: &str = "gt.tum";
const SCANS_HEADER: &str = "timestamp,azimuth_rad,range_m,intensity";
const IMU_HEADER: &str = "timestamp,yaw_rate_rad_s";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Dataset {
    pub scans: Vec<RadarScan>,
    /// `None` when the directory has no IMU file.
    pub imu: Option<Vec<GyroSample>>,
    pub ground_truth: Option<Trajectory>,
}

fn parse_rows<const N: usize>(text: &str, path: &Path, header: &str) -> Result<Vec<(usize, [f64; N])>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') || (n == 0 && line == header) {
            continue;
        }
        let err = |msg: String| SlamError::Parse {
            path: path.to_path_buf(),
            line: n + 1,
            msg,
        };
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != N {
            return Err(err(format!("expected {N} fields, found {}", fields.len())));
        }
        let mut v = [0.0f64; N];
        for (slot, f) in v.iter_mut().zip(&fields) {
            *slot = f.parse().map_err(|e| err(format!("{f:?}: {e}")))?;
            if !slot.is_finite() {
                return Err(err(format!("non-finite value {f:?}")));
            }
        }
        rows.push((n + 1, v));
    }
    Ok(rows)
}

pub fn parse_scans(text: &str, path: &Path) -> Result<Vec<RadarScan>> {
    let mut scans: Vec<RadarScan> = Vec::new();
    for (line, [t, az, range, intensity]) in parse_rows::<4>(text, path, SCANS_HEADER)? {
        let ret = RadarReturn { range, intensity };
        match scans.last_mut() {
            Some(s) if s.timestamp == t => match s.beams.last_mut() {
                Some(b) if b.azimuth == az => b.returns.push(ret),
                _ => s.beams.push(Beam {
                    azimuth: az,
                    returns: vec![ret],
                }),
            },
            last => {
                if let Some(s) = last {
                    if t < s.timestamp {
                        return Err(SlamError::Parse {
                            path: path.to_path_buf(),
                            line,
                            msg: format!("timestamp {t} after {}", s.timestamp),
                        });
                    }
                }
                scans.push(RadarScan {
                    timestamp: t,
                    beams: vec![Beam {
                        azimuth: az,
                        returns: vec![ret],
                    }],
                });
            }
        }
    }
    if scans.is_empty() {
        return Err(SlamError::NoScans);
    }
    Ok(scans)
}

pub fn parse_imu(text: &str, path: &Path) -> Result<Vec<GyroSample>> {
    let mut out: Vec<GyroSample> = Vec::new();
    for (line, [t, w]) in parse_rows::<2>(text, path, IMU_HEADER)? {
        if let Some(last) = out.last() {
            if !(t > last.timestamp) {
                return Err(SlamError::Parse {
                    path: path.to_path_buf(),
                    line,
                    msg: format!("timestamp {t} not after {}", last.timestamp),
                });
            }
        }
        out.push(GyroSample {
            timestamp: t,
            yaw_rate: w,
        });
    }
    Ok(out)
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let scans_path = dir.join(SCANS_FILE);
    let scans = parse_scans(&fs::read_to_string(&scans_path)?, &scans_path)?;
    let imu_path = dir.join(IMU_FILE);
    let imu = if imu_path.exists() {
        Some(parse_imu(&fs::read_to_string(&imu_path)?, &imu_path)?)
    } else {
        None
    };
    let gt_path = dir.join(GT_FILE);
    let ground_truth = if gt_path.exists() {
        Some(Trajectory::read_tum(&gt_path)?)
    } else {
        None
    };
    Ok(Dataset { scans, imu, ground_truth })
}

pub fn scans_to_csv(scans: &[RadarScan]) -> String {
    let mut out = String::from(SCANS_HEADER);
    out.push('\n');
    for s in scans {
        for b in &s.beams {
            for r in &b.returns {
                let _ = writeln!(out, "{},{},{},{}", s.timestamp, b.azimuth, r.range, r.intensity);
            }
        }
    }
    out
}

pub fn imu_to_csv(samples: &[GyroSample]) -> String {
    let mut out = String::from(IMU_HEADER);
    out.push('\n');
    for g in samples {
        let _ = writeln!(out, "{},{}", g.timestamp, g.yaw_rate);
    }
    out
}

/// Writes the dataset layout into `dir`, creating it if needed.
pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(SCANS_FILE), scans_to_csv(&data.scans))?;
    if let Some(imu) = &data.imu {
        fs::write(dir.join(IMU_FILE), imu_to_csv(imu))?;
    }
    if let Some(gt) = &data.ground_truth {
        gt.write_tum(&dir.join(GT_FILE))?;
    }
    Ok(())
}
