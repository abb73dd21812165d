//! Radar scan filtering and gyro integration.

use nalgebra::Vector2;

use crate::error::{Result, SlamError};

/// One radar return along a beam.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadarReturn {
    pub range: f64,
    pub intensity: f64,
}

/// All returns of one azimuth, ordered by increasing range.
#[derive(Clone, Debug, PartialEq)]
pub struct Beam {
    pub azimuth: f64,
    pub returns: Vec<RadarReturn>,
}

/// One sweep of polar returns.
#[derive(Clone, Debug, PartialEq)]
pub struct RadarScan {
    pub timestamp: f64,
    pub beams: Vec<Beam>,
}

impl RadarScan {
    pub fn num_returns(&self) -> usize {
        self.beams.iter().map(|b| b.returns.len()).sum()
    }

    /// Re-wraps Cartesian points as a scan, one beam per distinct azimuth.
    ///
    /// Points are grouped by their polar angle (rounded to 1e-9 rad) so that
    /// the output of [`filter_scan`] maps back onto its source beams.
    pub fn from_points(timestamp: f64, points: &[AugmentedPoint]) -> RadarScan {
        let mut polar: Vec<(f64, RadarReturn)> = points
            .iter()
            .map(|p| {
                let az = p.y.atan2(p.x).rem_euclid(std::f64::consts::TAU);
                let key = (az * 1e9).round() / 1e9;
                (
                    key,
                    RadarReturn {
                        range: p.x.hypot(p.y),
                        intensity: p.p,
                    },
                )
            })
            .collect();
        polar.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.range.total_cmp(&b.1.range)));
        let mut beams: Vec<Beam> = Vec::new();
        for (az, ret) in polar {
            match beams.last_mut() {
                Some(b) if b.azimuth == az => b.returns.push(ret),
                _ => beams.push(Beam {
                    azimuth: az,
                    returns: vec![ret],
                }),
            }
        }
        RadarScan { timestamp, beams }
    }
}

/// A Cartesian point carrying the return intensity as a third coordinate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AugmentedPoint {
    pub x: f64,
    pub y: f64,
    pub p: f64,
}

impl AugmentedPoint {
    pub const fn new(x: f64, y: f64, p: f64) -> Self {
        Self { x, y, p }
    }

    pub fn xy(&self) -> Vector2<f64> {
        Vector2::new(self.x, self.y)
    }

    pub fn range(&self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn bearing(&self) -> f64 {
        self.y.atan2(self.x)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterConfig {
    pub intensity_threshold: f64,
    pub min_range: f64,
    pub max_range: f64,
    /// Largest range step between two neighbouring cluster members.
    pub cluster_gap: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            intensity_threshold: 40.0,
            min_range: 0.5,
            max_range: 16.0,
            cluster_gap: 0.3,
        }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.min_range >= 0.0 && self.min_range < self.max_range) {
            return Err(SlamError::Config(format!(
                "filter range bounds must satisfy 0 <= min ({}) < max ({})",
                self.min_range, self.max_range
            )));
        }
        if !(self.cluster_gap > 0.0) {
            return Err(SlamError::Config("filter.cluster_gap must be positive".into()));
        }
        Ok(())
    }
}

/// Returns the indices (into `survivors`) of the cluster grown around the
/// strongest return of one beam.
fn beam_cluster(survivors: &[RadarReturn], gap: f64) -> std::ops::RangeInclusive<usize> {
    // Ties resolve to the smaller range: the first maximum wins.
    let mut seed = 0;
    for (i, r) in survivors.iter().enumerate() {
        if r.intensity > survivors[seed].intensity {
            seed = i;
        }
    }
    let mut lo = seed;
    while lo > 0 {
        let (inner, outer) = (&survivors[lo], &survivors[lo - 1]);
        if inner.range - outer.range <= gap && outer.intensity <= inner.intensity {
            lo -= 1;
        } else {
            break;
        }
    }
    let mut hi = seed;
    while hi + 1 < survivors.len() {
        let (inner, outer) = (&survivors[hi], &survivors[hi + 1]);
        if outer.range - inner.range <= gap && outer.intensity <= inner.intensity {
            hi += 1;
        } else {
            break;
        }
    }
    lo..=hi
}

/// Two-step radar filter: gate by intensity and range, then keep the
/// monotonically decaying cluster around each beam's strongest return.
pub fn filter_scan(scan: &RadarScan, cfg: &FilterConfig) -> Vec<AugmentedPoint> {
    let mut out = Vec::new();
    let mut survivors = Vec::new();
    for beam in &scan.beams {
        survivors.clear();
        survivors.extend(beam.returns.iter().copied().filter(|r| {
            r.intensity >= cfg.intensity_threshold && r.range >= cfg.min_range && r.range <= cfg.max_range
        }));
        if survivors.is_empty() {
            continue;
        }
        let (s, c) = beam.azimuth.sin_cos();
        for r in &survivors[beam_cluster(&survivors, cfg.cluster_gap)] {
            out.push(AugmentedPoint::new(r.range * c, r.range * s, r.intensity));
        }
    }
    out
}

/// Relative yaw accumulated over one scan interval.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ImuSegment {
    pub delta_rotation: f64,
    pub dt: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GyroSample {
    pub timestamp: f64,
    pub yaw_rate: f64,
}

impl GyroSample {
    pub const fn new(timestamp: f64, yaw_rate: f64) -> Self {
        Self { timestamp, yaw_rate }
    }
}

fn rate_at(samples: &[GyroSample], t: f64) -> f64 {
    let i = samples.partition_point(|s| s.timestamp <= t);
    if i == 0 {
        return samples[0].yaw_rate;
    }
    if i == samples.len() {
        return samples[i - 1].yaw_rate;
    }
    let (a, b) = (&samples[i - 1], &samples[i]);
    let w = (t - a.timestamp) / (b.timestamp - a.timestamp);
    a.yaw_rate + w * (b.yaw_rate - a.yaw_rate)
}

/// Trapezoidal integral of the yaw rate over `[t0, t1]`.
///
/// Samples are linearly interpolated at the interval bounds and held constant
/// beyond the first/last sample. Fails when the largest stretch of `[t0, t1]`
/// without a sample exceeds half the interval.
pub fn integrate_gyro(samples: &[GyroSample], t0: f64, t1: f64) -> Result<ImuSegment> {
    let dt = t1 - t0;
    if !(dt > 0.0) {
        return Err(SlamError::Config(format!("gyro interval must be positive, got {dt}")));
    }
    let limit = 0.5 * dt;
    if samples.is_empty() {
        return Err(SlamError::MissingImu { gap: dt, limit });
    }
    let mut knots = vec![(t0, rate_at(samples, t0))];
    knots.extend(
        samples
            .iter()
            .filter(|s| s.timestamp > t0 && s.timestamp < t1)
            .map(|s| (s.timestamp, s.yaw_rate)),
    );
    knots.push((t1, rate_at(samples, t1)));

    // Coverage: distance between real samples, counting the interval bounds
    // only when they are bracketed by data.
    let mut covered: Vec<f64> = Vec::with_capacity(knots.len());
    let first = samples[0].timestamp;
    let last = samples[samples.len() - 1].timestamp;
    covered.push(if first <= t0 { t0 } else { first.min(t1) });
    covered.extend(samples.iter().map(|s| s.timestamp).filter(|&t| t > t0 && t < t1));
    covered.push(if last >= t1 { t1 } else { last.max(t0) });
    let mut gap = covered.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
    gap = gap.max(covered[0] - t0).max(t1 - covered[covered.len() - 1]);
    if gap > limit {
        return Err(SlamError::MissingImu { gap, limit });
    }

    let delta_rotation = knots
        .windows(2)
        .map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0))
        .sum();
    Ok(ImuSegment { delta_rotation, dt })
}
