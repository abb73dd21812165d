//! Synthetic radar worlds: wall segments, a spline trajectory and a simple
//! ray-cast sensor model with return clusters, clutter and a biased gyro.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::Path;

use nalgebra::Vector2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::Dataset;
use super::trajectory::Trajectory;
use crate::error::{Result, SlamError};
use crate::frontend::{Beam, GyroSample, RadarReturn, RadarScan};
use crate::se2::{wrap_angle, Pose2};

#[derive(Clone, Debug, PartialEq)]
pub struct Wall {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
    /// Mean return intensity.
    pub reflectivity: f64,
    /// Intensity noise standard deviation.
    pub sigma: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SensorModel {
    pub beams: usize,
    pub scan_rate: f64,
    pub max_range: f64,
    pub range_sigma: f64,
    /// Spacing of the returns within one cluster.
    pub range_resolution: f64,
    pub clutter_rate: f64,
    pub clutter_intensity: (f64, f64),
    /// Low-intensity noise returns added to every beam.
    pub noise_returns: usize,
    pub noise_floor: f64,
    pub imu_rate: f64,
    pub gyro_bias: f64,
    pub gyro_sigma: f64,
}

impl Default for SensorModel {
    fn default() -> Self {
        Self {
            beams: 400,
            scan_rate: 5.0,
            max_range: 16.0,
            range_sigma: 0.02,
            range_resolution: 0.05,
            clutter_rate: 0.02,
            clutter_intensity: (40.0, 110.0),
            noise_returns: 1,
            noise_floor: 30.0,
            imu_rate: 100.0,
            gyro_bias: 0.0,
            gyro_sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticWorld {
    pub walls: Vec<Wall>,
    pub waypoints: Vec<Vector2<f64>>,
    /// Whether the spline returns from the last waypoint to the first.
    pub closed: bool,
    pub speed: f64,
    /// Distance to drive; `None` drives the open path once.
    pub path_length: Option<f64>,
    /// Session length for a stationary robot.
    pub duration: f64,
    /// Heading used when the robot does not move.
    pub initial_yaw: f64,
    pub sensor: SensorModel,
}

impl Default for SyntheticWorld {
    fn default() -> Self {
        Self {
            walls: Vec::new(),
            waypoints: Vec::new(),
            closed: false,
            speed: 0.0,
            path_length: None,
            duration: 10.0,
            initial_yaw: 0.0,
            sensor: SensorModel::default(),
        }
    }
}

impl SyntheticWorld {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(SlamError::Config(m.to_string()));
        if self.walls.iter().any(|w| !(w.reflectivity >= 0.0) || !(w.sigma >= 0.0)) {
            return err("wall reflectivity and sigma must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.sensor.clutter_rate) {
            return err("clutter_rate must lie in [0, 1]");
        }
        if self.sensor.beams == 0 || !(self.sensor.scan_rate > 0.0) || !(self.sensor.max_range > 0.0) || !(self.sensor.imu_rate > 0.0) {
            return err("beams, scan_rate, max_range and imu_rate must be positive");
        }
        if self.waypoints.is_empty() {
            return err("world needs at least one waypoint");
        }
        if !(self.speed >= 0.0) {
            return err("speed must be non-negative");
        }
        Ok(())
    }

    /// Parses `key = value` lines plus repeated `wall = x1 y1 x2 y2
    /// reflectivity sigma` and `waypoint = x y` entries.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut w = SyntheticWorld::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| SlamError::Parse {
                path: path.to_path_buf(),
                line: n + 1,
                msg,
            };
            let (key, value) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (key, value) = (key.trim(), value.trim());
            let nums = || -> Result<Vec<f64>> {
                value
                    .split_whitespace()
                    .map(|f| f.parse::<f64>().map_err(|e| err(format!("{f:?}: {e}"))))
                    .collect()
            };
            let one = || -> Result<f64> {
                match nums()?.as_slice() {
                    [v] => Ok(*v),
                    _ => Err(err(format!("{key} takes one number"))),
                }
            };
            let count = || -> Result<usize> { value.parse().map_err(|e| err(format!("{value:?}: {e}"))) };
            let s = &mut w.sensor;
            match key {
                "wall" => match nums()?.as_slice() {
                    &[x1, y1, x2, y2, reflectivity, sigma] => w.walls.push(Wall {
                        a: Vector2::new(x1, y1),
                        b: Vector2::new(x2, y2),
                        reflectivity,
                        sigma,
                    }),
                    _ => return Err(err("wall takes x1 y1 x2 y2 reflectivity sigma".into())),
                },
                "waypoint" => match nums()?.as_slice() {
                    &[x, y] => w.waypoints.push(Vector2::new(x, y)),
                    _ => return Err(err("waypoint takes x y".into())),
                },
                "closed" => w.closed = value.parse().map_err(|_| err(format!("{value:?} is not a boolean")))?,
                "speed" => w.speed = one()?,
                "path_length" => w.path_length = Some(one()?),
                "duration" => w.duration = one()?,
                "initial_yaw" => w.initial_yaw = one()?,
                "beams" => s.beams = count()?,
                "scan_rate" => s.scan_rate = one()?,
                "max_range" => s.max_range = one()?,
                "range_sigma" => s.range_sigma = one()?,
                "range_resolution" => s.range_resolution = one()?,
                "clutter_rate" => s.clutter_rate = one()?,
                "clutter_intensity" => match nums()?.as_slice() {
                    &[lo, hi] if lo <= hi => s.clutter_intensity = (lo, hi),
                    _ => return Err(err("clutter_intensity takes min max".into())),
                },
                "noise_returns" => s.noise_returns = count()?,
                "noise_floor" => s.noise_floor = one()?,
                "imu_rate" => s.imu_rate = one()?,
                "gyro_bias" => s.gyro_bias = one()?,
                "gyro_sigma" => s.gyro_sigma = one()?,
                _ => return Err(err(format!("unknown key {key:?}"))),
            }
        }
        w.validate()?;
        Ok(w)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }
}

/// Centripetal-free uniform Catmull-Rom spline, reparameterised by arc
/// length through a dense lookup table.
#[derive(Clone, Debug)]
pub struct Spline {
    points: Vec<Vector2<f64>>,
    closed: bool,
    /// `(arc length, global parameter)` samples.
    table: Vec<(f64, f64)>,
}

const SAMPLES_PER_SEGMENT: usize = 400;

impl Spline {
    pub fn new(points: Vec<Vector2<f64>>, closed: bool) -> Self {
        let mut s = Spline {
            points,
            closed,
            table: vec![(0.0, 0.0)],
        };
        let segments = s.segments();
        let mut length = 0.0;
        let mut prev = s.position(0.0);
        for k in 1..=segments * SAMPLES_PER_SEGMENT {
            let u = k as f64 / SAMPLES_PER_SEGMENT as f64;
            let p = s.position(u);
            length += (p - prev).norm();
            s.table.push((length, u));
            prev = p;
        }
        s
    }

    fn segments(&self) -> usize {
        let n = self.points.len();
        if n < 2 {
            0
        } else if self.closed {
            n
        } else {
            n - 1
        }
    }

    pub fn length(&self) -> f64 {
        self.table.last().map_or(0.0, |e| e.0)
    }

    fn control(&self, i: isize) -> Vector2<f64> {
        let n = self.points.len() as isize;
        let idx = if self.closed { i.rem_euclid(n) } else { i.clamp(0, n - 1) };
        self.points[idx as usize]
    }

    fn local(&self, u: f64) -> (isize, f64) {
        let segs = self.segments().max(1);
        let u = u.clamp(0.0, segs as f64);
        let i = (u.floor() as usize).min(segs - 1);
        (i as isize, u - i as f64)
    }

    fn position(&self, u: f64) -> Vector2<f64> {
        if self.points.len() < 2 {
            return self.points[0];
        }
        let (i, t) = self.local(u);
        let (p0, p1, p2, p3) = (self.control(i - 1), self.control(i), self.control(i + 1), self.control(i + 2));
        let (t2, t3) = (t * t, t * t * t);
        0.5 * (2.0 * p1 + (p2 - p0) * t + (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t2 + (3.0 * p1 - p0 - 3.0 * p2 + p3) * t3)
    }

    fn tangent(&self, u: f64) -> Vector2<f64> {
        if self.points.len() < 2 {
            return Vector2::new(1.0, 0.0);
        }
        let (i, t) = self.local(u);
        let (p0, p1, p2, p3) = (self.control(i - 1), self.control(i), self.control(i + 1), self.control(i + 2));
        0.5 * ((p2 - p0) + 2.0 * (2.0 * p0 - 5.0 * p1 + 4.0 * p2 - p3) * t + 3.0 * (3.0 * p1 - p0 - 3.0 * p2 + p3) * t * t)
    }

    fn parameter_at(&self, s: f64) -> f64 {
        let total = self.length();
        let s = if self.closed && total > 0.0 { s.rem_euclid(total) } else { s.clamp(0.0, total) };
        let k = self.table.partition_point(|e| e.0 < s).clamp(1, self.table.len() - 1);
        let (s0, u0) = self.table[k - 1];
        let (s1, u1) = self.table[k];
        if s1 > s0 {
            u0 + (u1 - u0) * (s - s0) / (s1 - s0)
        } else {
            u0
        }
    }

    /// Pose at arc length `s`, heading along the tangent.
    pub fn pose_at(&self, s: f64) -> (Vector2<f64>, f64) {
        let u = self.parameter_at(s);
        let d = self.tangent(u);
        (self.position(u), d.y.atan2(d.x))
    }
}

fn ray_segment(origin: &Vector2<f64>, dir: &Vector2<f64>, a: &Vector2<f64>, b: &Vector2<f64>) -> Option<f64> {
    let e = b - a;
    let denom = dir.x * e.y - dir.y * e.x;
    if denom.abs() < 1e-15 {
        return None;
    }
    let w = a - origin;
    let t = (w.x * e.y - w.y * e.x) / denom;
    let u = (w.x * dir.y - w.y * dir.x) / denom;
    (t > 0.0 && (0.0..=1.0).contains(&u)).then_some(t)
}

/// Nearest wall hit along a ray: range and wall index.
pub fn ray_cast(walls: &[Wall], origin: &Vector2<f64>, angle: f64) -> Option<(f64, usize)> {
    let dir = Vector2::new(angle.cos(), angle.sin());
    walls
        .iter()
        .enumerate()
        .filter_map(|(i, w)| ray_segment(origin, &dir, &w.a, &w.b).map(|t| (t, i)))
        .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
}

fn ground_truth_motion(world: &SyntheticWorld) -> (Vec<f64>, Box<dyn Fn(f64) -> Pose2 + '_>) {
    let rate = world.sensor.scan_rate;
    let moving = world.speed > 0.0 && world.waypoints.len() >= 2;
    if !moving {
        let p = world.waypoints[0];
        let pose = Pose2::new(p.x, p.y, world.initial_yaw);
        let n = (world.duration * rate).floor() as usize + 1;
        return ((0..n).map(|k| k as f64 / rate).collect(), Box::new(move |_| pose));
    }
    let spline = Spline::new(world.waypoints.clone(), world.closed);
    let length = world.path_length.unwrap_or_else(|| spline.length());
    let duration = length / world.speed;
    let n = (duration * rate).floor() as usize + 1;
    let speed = world.speed;
    let f = move |t: f64| {
        let (p, yaw) = spline.pose_at(speed * t);
        Pose2::new(p.x, p.y, yaw)
    };
    ((0..n).map(|k| k as f64 / rate).collect(), Box::new(f))
}

/// Renders a dataset with ground truth; deterministic for a given seed.
pub fn simulate(world: &SyntheticWorld, seed: u64) -> Result<Dataset> {
    world.validate()?;
    let s = &world.sensor;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let range_noise = Normal::new(0.0, s.range_sigma).map_err(|e| SlamError::Config(e.to_string()))?;
    let gyro_noise = Normal::new(0.0, s.gyro_sigma).map_err(|e| SlamError::Config(e.to_string()))?;
    let (stamps, pose_at) = ground_truth_motion(world);

    // Ground truth is reported in the frame of the first pose, which is
    // where a session places its origin.
    let start_inv = pose_at(stamps[0]).inverse();
    let mut scans = Vec::with_capacity(stamps.len());
    let mut gt = Trajectory::new();
    for &t in &stamps {
        let pose = pose_at(t);
        gt.push(t, start_inv.compose(&pose))?;
        let mut beams = Vec::with_capacity(s.beams);
        for b in 0..s.beams {
            let azimuth = b as f64 * TAU / s.beams as f64 - PI;
            let mut returns = Vec::new();
            for _ in 0..s.noise_returns {
                returns.push(RadarReturn {
                    range: rng.random_range(0.0..s.max_range),
                    intensity: rng.random_range(0.0..s.noise_floor),
                });
            }
            if let Some((range, wall)) = ray_cast(&world.walls, pose.translation(), pose.angle() + azimuth) {
                if range <= s.max_range {
                    let w = &world.walls[wall];
                    let peak = (w.reflectivity + w.sigma * rng.sample::<f64, _>(rand_distr::StandardNormal)).max(0.0);
                    let r0 = range + range_noise.sample(&mut rng);
                    let size: i32 = rng.random_range(3..=5);
                    let before = (size - 1) / 2;
                    for j in -before..(size - before) {
                        returns.push(RadarReturn {
                            range: r0 + j as f64 * s.range_resolution,
                            intensity: peak * 0.7f64.powi(j.abs()),
                        });
                    }
                }
            }
            if rng.random_bool(s.clutter_rate) {
                let (lo, hi) = s.clutter_intensity;
                returns.push(RadarReturn {
                    range: rng.random_range(0.5..s.max_range),
                    intensity: if hi > lo { rng.random_range(lo..hi) } else { lo },
                });
            }
            returns.sort_by(|a, b| a.range.total_cmp(&b.range));
            if !returns.is_empty() {
                beams.push(Beam { azimuth, returns });
            }
        }
        scans.push(RadarScan { timestamp: t, beams });
    }

    // Gyro from the finite-difference heading rate of the ground truth.
    let end = *stamps.last().unwrap_or(&0.0);
    let n_imu = (end * s.imu_rate).ceil() as usize + 1;
    let h = 1e-3;
    let mut imu = Vec::with_capacity(n_imu);
    for k in 0..n_imu {
        let t = k as f64 / s.imu_rate;
        let rate = wrap_angle(pose_at(t + h).angle() - pose_at(t - h).angle()) / (2.0 * h);
        imu.push(GyroSample {
            timestamp: t,
            yaw_rate: rate + s.gyro_bias + gyro_noise.sample(&mut rng),
        });
    }

    Ok(Dataset {
        scans,
        imu: Some(imu),
        ground_truth: Some(gt),
    })
}
