//! Timestamped planar trajectories and TUM text I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Result, SlamError};
use crate::se2::Pose2;

/// Orientation fields of a TUM line as read, kept so that re-exporting a
/// loaded file reproduces it exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
struct RawOrientation {
    tz: f64,
    q: [f64; 4],
}

/// Poses with strictly increasing timestamps.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Trajectory {
    entries: Vec<(f64, Pose2)>,
    raw: Vec<Option<RawOrientation>>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<(f64, Pose2)>) -> Result<Self> {
        let mut t = Trajectory::new();
        for (s, p) in entries {
            t.push(s, p)?;
        }
        Ok(t)
    }

    pub fn push(&mut self, timestamp: f64, pose: Pose2) -> Result<()> {
        if let Some(&(last, _)) = self.entries.last() {
            if !(timestamp > last) {
                return Err(SlamError::NonMonotoneTimestamp { last, got: timestamp });
            }
        }
        self.entries.push((timestamp, pose));
        self.raw.push(None);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(f64, Pose2)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = &(f64, Pose2)> {
        self.entries.iter()
    }

    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.0).collect()
    }

    pub fn poses(&self) -> Vec<Pose2> {
        self.entries.iter().map(|e| e.1).collect()
    }

    pub fn time_range(&self) -> Option<(f64, f64)> {
        Some((self.entries.first()?.0, self.entries.last()?.0))
    }

    /// Tangent-space interpolation `P_i · Exp(s · Log(P_i⁻¹ P_{i+1}))`
    /// between the bracketing poses; `None` outside the time range.
    pub fn interpolate(&self, t: f64) -> Option<Pose2> {
        let (t0, t1) = self.time_range()?;
        if !(t >= t0 && t <= t1) {
            return None;
        }
        let i = self.entries.partition_point(|e| e.0 <= t);
        let (ta, pa) = self.entries[i - 1];
        if ta == t || i == self.entries.len() {
            return Some(pa);
        }
        let (tb, pb) = self.entries[i];
        let s = (t - ta) / (tb - ta);
        let xi = pa.between(&pb).log().scaled(s);
        Some(pa.compose(&Pose2::exp(&xi)))
    }

    /// Sum of translation steps.
    pub fn path_length(&self) -> f64 {
        self.entries
            .windows(2)
            .map(|w| (w[1].1.translation() - w[0].1.translation()).norm())
            .sum()
    }

    /// TUM text: `timestamp tx ty tz qx qy qz qw`, one pose per line.
    pub fn to_tum_string(&self) -> String {
        let mut out = String::new();
        for ((t, p), raw) in self.entries.iter().zip(&self.raw) {
            let RawOrientation { tz, q } = raw.unwrap_or_else(|| {
                let h = 0.5 * p.angle();
                RawOrientation {
                    tz: 0.0,
                    q: [0.0, 0.0, h.sin(), h.cos()],
                }
            });
            let _ = writeln!(out, "{} {} {} {} {} {} {} {}", t, p.x(), p.y(), tz, q[0], q[1], q[2], q[3]);
        }
        out
    }

    pub fn parse_tum(text: &str, path: &Path) -> Result<Self> {
        let mut traj = Trajectory::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let err = |msg: String| SlamError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            let v: Vec<f64> = line
                .split_whitespace()
                .map(|f| f.parse::<f64>().map_err(|e| err(format!("{f:?}: {e}"))))
                .collect::<Result<_>>()?;
            if v.len() != 8 {
                return Err(err(format!("expected 8 columns, found {}", v.len())));
            }
            let [qx, qy, qz, qw] = [v[4], v[5], v[6], v[7]];
            let yaw = (2.0 * (qw * qz + qx * qy)).atan2(1.0 - 2.0 * (qy * qy + qz * qz));
            traj.push(v[0], Pose2::new(v[1], v[2], yaw)).map_err(|e| err(e.to_string()))?;
            *traj.raw.last_mut().expect("just pushed") = Some(RawOrientation {
                tz: v[3],
                q: [qx, qy, qz, qw],
            });
        }
        Ok(traj)
    }

    pub fn read_tum(path: &Path) -> Result<Self> {
        Self::parse_tum(&fs::read_to_string(path)?, path)
    }

    pub fn write_tum(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_tum_string())?;
        Ok(())
    }
}
