//! Session configuration: presets and the flat `key = value` file format.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};

use crate::error::{Result, SlamError};
use crate::estimator::{EstimatorConfig, Matrix6};
use crate::frontend::FilterConfig;
use crate::loop_closure::LoopConfig;
use crate::ndt::{CellParams, DEFAULT_EIGEN_FLOOR_RATIO, DEFAULT_MIN_POINTS};
use crate::pose_graph::GraphConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConfigPreset {
    Indoor,
    Outdoor,
    Mixed,
    Custom,
}

impl FromStr for ConfigPreset {
    type Err = SlamError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "indoor" => Ok(Self::Indoor),
            "outdoor" => Ok(Self::Outdoor),
            "mixed" => Ok(Self::Mixed),
            "custom" => Ok(Self::Custom),
            _ => Err(SlamError::Config(format!("unknown preset {s:?}"))),
        }
    }
}

impl fmt::Display for ConfigPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Indoor => "indoor",
            Self::Outdoor => "outdoor",
            Self::Mixed => "mixed",
            Self::Custom => "custom",
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct NdtConfig {
    pub resolution: f64,
    pub min_points: usize,
    pub eigen_floor_ratio: f64,
    /// Factor applied to intensities before they enter NDT cells, so that
    /// the intensity axis is commensurate with meters.
    pub intensity_scale: f64,
}

impl NdtConfig {
    pub fn cell_params(&self) -> CellParams {
        CellParams {
            min_points: self.min_points,
            eigen_floor_ratio: self.eigen_floor_ratio,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct KeyframeConfig {
    pub translation: f64,
    pub rotation_deg: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SubmapConfig {
    pub max_keyframes: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SlamConfig {
    pub preset: ConfigPreset,
    pub filter: FilterConfig,
    pub ndt: NdtConfig,
    pub estimator: EstimatorConfig,
    pub keyframe: KeyframeConfig,
    pub submap: SubmapConfig,
    pub loop_closure: LoopConfig,
    pub graph: GraphConfig,
}

impl Default for SlamConfig {
    fn default() -> Self {
        Self::preset(ConfigPreset::Indoor)
    }
}

impl SlamConfig {
    /// Resolution, loss shape and scale of the named environment; the other
    /// values are shared.
    pub fn preset(preset: ConfigPreset) -> Self {
        let (resolution, alpha, c) = match preset {
            ConfigPreset::Indoor | ConfigPreset::Custom => (0.5, -2.0, 1.5),
            ConfigPreset::Outdoor => (1.2, -1.0, 2.0),
            ConfigPreset::Mixed => (1.0, -1.5, 2.0),
        };
        let max_range = if preset == ConfigPreset::Indoor { 16.0 } else { 60.0 };
        SlamConfig {
            preset,
            filter: FilterConfig {
                max_range,
                ..FilterConfig::default()
            },
            ndt: NdtConfig {
                resolution,
                min_points: DEFAULT_MIN_POINTS,
                eigen_floor_ratio: DEFAULT_EIGEN_FLOOR_RATIO,
                intensity_scale: 0.01,
            },
            estimator: EstimatorConfig {
                alpha,
                c,
                ..EstimatorConfig::default()
            },
            keyframe: KeyframeConfig {
                translation: 0.5,
                rotation_deg: 10.0,
            },
            submap: SubmapConfig { max_keyframes: 10 },
            loop_closure: LoopConfig {
                max_range,
                w_od: 0.1,
                ..LoopConfig::default()
            },
            graph: GraphConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.filter.validate()?;
        self.estimator.validate()?;
        self.loop_closure.validate()?;
        self.graph.validate()?;
        let err = |m: &str| Err(SlamError::Config(m.to_string()));
        if !(self.ndt.resolution > 0.0) || !(self.ndt.intensity_scale >= 0.0) || !(self.ndt.eigen_floor_ratio > 0.0) {
            return err("ndt.resolution and ndt.eigen_floor_ratio must be positive, ndt.intensity_scale non-negative");
        }
        if self.ndt.min_points < 2 {
            return err("ndt.min_points must be at least 2");
        }
        if !(self.keyframe.translation >= 0.0) || !(self.keyframe.rotation_deg >= 0.0) {
            return err("keyframe thresholds must be non-negative");
        }
        if self.submap.max_keyframes == 0 {
            return err("submap.max_keyframes must be at least 1");
        }
        Ok(())
    }

    /// Parses a config file. A `preset` line selects the base values
    /// wherever it appears; every other line overrides one field.
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = Vec::new();
        let mut preset = ConfigPreset::Indoor;
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
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected key = value".into()))?;
            let (k, v) = (k.trim(), v.trim());
            if k == "preset" {
                preset = v.parse().map_err(|e: SlamError| err(e.to_string()))?;
            } else {
                lines.push((n + 1, k, v));
            }
        }
        let mut cfg = SlamConfig::preset(preset);
        for (line, k, v) in lines {
            cfg.set(k, v).map_err(|msg| SlamError::Parse {
                path: path.to_path_buf(),
                line,
                msg,
            })?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, path)
    }

    /// Sets one namespaced key.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        fn num<T: FromStr>(v: &str) -> std::result::Result<T, String>
        where
            T::Err: fmt::Display,
        {
            v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
        }
        fn diag<const N: usize>(v: &str) -> std::result::Result<[f64; N], String> {
            let vals: Vec<f64> = v.split_whitespace().map(num).collect::<std::result::Result<_, _>>()?;
            vals.try_into().map_err(|_| format!("expected {N} diagonal entries"))
        }
        let e = &mut self.estimator;
        let l = &mut self.loop_closure;
        match key {
            "filter.intensity_threshold" => self.filter.intensity_threshold = num(value)?,
            "filter.min_range" => self.filter.min_range = num(value)?,
            "filter.max_range" => self.filter.max_range = num(value)?,
            "filter.cluster_gap" => self.filter.cluster_gap = num(value)?,
            "ndt.resolution" => self.ndt.resolution = num(value)?,
            "ndt.min_points" => self.ndt.min_points = num(value)?,
            "ndt.eigen_floor_ratio" => self.ndt.eigen_floor_ratio = num(value)?,
            "ndt.intensity_scale" => self.ndt.intensity_scale = num(value)?,
            "estimator.window_length" => e.window_length = num(value)?,
            "estimator.alpha" => e.alpha = num(value)?,
            "estimator.c" => e.c = num(value)?,
            "estimator.mu0" => e.mu0 = num(value)?,
            "estimator.k_mu" => e.k_mu = num(value)?,
            "estimator.w_ndt" => e.w_ndt = num(value)?,
            "estimator.k_neighbors" => e.k_neighbors = num(value)?,
            "estimator.max_lm_iterations" => e.max_lm_iterations = num(value)?,
            "estimator.correspondence_rounds" => e.correspondence_rounds = num(value)?,
            "estimator.omega_mm" => e.omega_mm = Matrix6::from_diagonal(&nalgebra::Vector6::from(diag::<6>(value)?)),
            "estimator.omega_imu" => e.omega_imu = Matrix2::from_diagonal(&Vector2::from(diag::<2>(value)?)),
            "keyframe.translation" => self.keyframe.translation = num(value)?,
            "keyframe.rotation_deg" => self.keyframe.rotation_deg = num(value)?,
            "submap.max_keyframes" => self.submap.max_keyframes = num(value)?,
            "loop.enabled" => l.enabled = num(value)?,
            "loop.n_ring" => l.n_ring = num(value)?,
            "loop.n_sector" => l.n_sector = num(value)?,
            "loop.max_range" => l.max_range = num(value)?,
            "loop.w_od" => l.w_od = num(value)?,
            "loop.min_loop_separation" => l.min_loop_separation = num(value)?,
            "loop.gate_threshold" => l.gate_threshold = num(value)?,
            "loop.max_correction_floor" => l.max_correction_floor = num(value)?,
            "loop.max_correction_ratio" => l.max_correction_ratio = num(value)?,
            "loop.descriptor_seed" => l.descriptor_seed = num(value)?,
            "graph.omega_od" => self.graph.omega_od = Matrix3::from_diagonal(&Vector3::from(diag::<3>(value)?)),
            "graph.omega_lo" => self.graph.omega_lo = Matrix3::from_diagonal(&Vector3::from(diag::<3>(value)?)),
            "graph.max_iterations" => self.graph.max_iterations = num(value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }
}
