//! Loop detection: descriptor search, registration refinement and the
//! divergence gate.

pub mod descriptor;
pub mod divergence;

use std::collections::HashSet;
use std::f64::consts::TAU;
use std::fmt;

use crate::error::{Result, SlamError};
use crate::estimator::{register, EstimatorConfig};
use crate::frontend::AugmentedPoint;
use crate::ndt::{CellIndex, NdtGrid, NdtSubmap};
use crate::pose_graph::KeyframeNode;
use crate::se2::Pose2;

pub use descriptor::{best_shift, descriptor_distance, make_descriptor, ScanContextDescriptor};
pub use divergence::{cauchy_schwarz_divergence, planar_mixture, planar_mixture_of, Gaussian2};

#[derive(Clone, Debug, PartialEq)]
pub struct LoopConfig {
    pub enabled: bool,
    pub n_ring: usize,
    pub n_sector: usize,
    pub max_range: f64,
    pub w_od: f64,
    /// Minimum difference in traveled distance for a pair to be considered.
    pub min_loop_separation: f64,
    pub gate_threshold: f64,
    /// A refined alignment may move at most `max_correction_floor +
    /// max_correction_ratio * separation` meters away from its seed, where
    /// `separation` is the traveled distance between query and candidate.
    pub max_correction_floor: f64,
    pub max_correction_ratio: f64,
    /// Also seed registration from the descriptor's best column shift.
    pub descriptor_seed: bool,
}

impl Default for LoopConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            n_ring: 20,
            n_sector: 60,
            max_range: 16.0,
            w_od: 0.5,
            min_loop_separation: 10.0,
            gate_threshold: 1.0,
            max_correction_floor: 1.0,
            max_correction_ratio: 0.1,
            descriptor_seed: false,
        }
    }
}

impl LoopConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_ring == 0 || self.n_sector == 0 || !(self.max_range > 0.0) {
            return Err(SlamError::Config("loop descriptor needs positive dimensions and max_range".into()));
        }
        let non_negative = [self.w_od, self.min_loop_separation, self.gate_threshold, self.max_correction_floor, self.max_correction_ratio];
        if !non_negative.iter().all(|v| *v >= 0.0) {
            return Err(SlamError::Config("loop weights and thresholds must be non-negative".into()));
        }
        Ok(())
    }
}

/// Relative traveled-distance mismatch, scaled by `w_od` and clamped.
pub fn odometry_similarity(query: &KeyframeNode, cand: &KeyframeNode, w_od: f64) -> f64 {
    let diff = (query.traveled_distance - cand.traveled_distance).abs();
    w_od * (diff / query.traveled_distance.max(1e-9)).clamp(0.0, 1.0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct LoopCandidate {
    pub query_node: usize,
    pub candidate_node: usize,
    pub candidate_submap: usize,
    pub d_sc: f64,
    pub d_od: f64,
    /// Absolute difference in traveled distance.
    pub separation: f64,
    /// Column shift aligning the query descriptor with the candidate's.
    pub shift: usize,
    pub refined_transform: Option<Pose2>,
    pub divergence: Option<f64>,
}

impl LoopCandidate {
    pub fn score(&self) -> f64 {
        self.d_sc + self.d_od
    }
}

/// Exhaustive argmin of `d_sc + d_od` over the eligible database entries.
pub fn find_candidate(query: &KeyframeNode, database: &[KeyframeNode], cfg: &LoopConfig) -> Result<Option<LoopCandidate>> {
    let mut best: Option<LoopCandidate> = None;
    for cand in database {
        if cand.id == query.id || (query.traveled_distance - cand.traveled_distance).abs() < cfg.min_loop_separation {
            continue;
        }
        let (d_sc, shift) = best_shift(&query.descriptor, &cand.descriptor)?;
        let c = LoopCandidate {
            query_node: query.id,
            candidate_node: cand.id,
            candidate_submap: cand.submap_id,
            d_sc,
            d_od: odometry_similarity(query, cand, cfg.w_od),
            separation: (query.traveled_distance - cand.traveled_distance).abs(),
            shift,
            refined_transform: None,
            divergence: None,
        };
        let better = match &best {
            None => true,
            Some(b) => c.score() < b.score() || (c.score() == b.score() && c.candidate_node < b.candidate_node),
        };
        if better {
            best = Some(c);
        }
    }
    Ok(best)
}

/// Registration seeds for a query against a candidate's submap, in the
/// submap frame: the current graph estimate and, optionally, the candidate
/// keyframe pose turned by the descriptor shift.
pub fn registration_seeds(query_pose: &Pose2, cand_pose: &Pose2, root_pose: &Pose2, cand: &LoopCandidate, cfg: &LoopConfig) -> Vec<Pose2> {
    let mut seeds = vec![root_pose.between(query_pose)];
    if cfg.descriptor_seed {
        let yaw = cand.shift as f64 * TAU / cfg.n_sector as f64;
        seeds.push(root_pose.between(cand_pose).compose(&Pose2::from_rotation(yaw)));
    }
    seeds
}

#[derive(Clone, Debug)]
pub struct LoopOutcome {
    pub candidate: LoopCandidate,
    pub accepted: bool,
    pub cause: Option<String>,
}

/// Divergence between the query points placed at `pose` in the submap frame
/// and the submap. The query is re-gridded on the submap lattice and the
/// submap is restricted to the cells the query occupies, so the value
/// reflects misalignment rather than the submap covering more ground than a
/// single scan.
pub fn alignment_divergence(points: &[AugmentedPoint], pose: &Pose2, submap: &NdtSubmap) -> Result<f64> {
    let moved: Vec<AugmentedPoint> = points
        .iter()
        .map(|p| {
            let v = pose.transform_point(&p.xy());
            AugmentedPoint::new(v.x, v.y, p.p)
        })
        .collect();
    let query = NdtGrid::from_points(&moved, submap.grid.resolution, submap.grid.params);
    let footprint: HashSet<CellIndex> = query.cells().map(|(i, _)| *i).collect();
    let source = planar_mixture_of(query.usable_cells().map(|(_, c)| c));
    let target = planar_mixture_of(submap.grid.usable_cells().filter(|(i, _)| footprint.contains(i)).map(|(_, c)| c));
    cauchy_schwarz_divergence(&source, &target)
}

/// Registers the query scan into the candidate submap from each seed, keeps
/// the alignment with the lowest divergence and applies the gate.
/// `query_points` are the points behind `query_scan`, in the query frame.
pub fn refine_and_gate(
    mut cand: LoopCandidate,
    query_scan: &NdtGrid,
    query_points: &[AugmentedPoint],
    submap: &NdtSubmap,
    seeds: &[Pose2],
    est: &EstimatorConfig,
    cfg: &LoopConfig,
) -> LoopOutcome {
    let mut best: Option<(f64, Pose2)> = None;
    let mut last_err = None;
    let max_correction = cfg.max_correction_floor + cfg.max_correction_ratio * cand.separation;
    for seed in seeds {
        let reg = match register(query_scan, &submap.grid, seed, est) {
            Ok(r) if r.degraded => {
                last_err = Some("registration diverged".to_string());
                continue;
            }
            Ok(r) if seed.between(&r.pose).translation().norm() > max_correction => {
                last_err = Some("registration left the plausible region".to_string());
                continue;
            }
            Ok(r) => r,
            Err(e) => {
                last_err = Some(format!("registration: {e}"));
                continue;
            }
        };
        match alignment_divergence(query_points, &reg.pose, submap) {
            Ok(d) if best.is_none_or(|(b, _)| d < b) => best = Some((d, reg.pose)),
            Ok(_) => {}
            Err(e) => last_err = Some(format!("divergence: {e}")),
        }
    }
    let Some((d, pose)) = best else {
        return reject(cand, last_err.unwrap_or_else(|| "no registration seed".into()));
    };
    cand.refined_transform = Some(pose);
    cand.divergence = Some(d);
    if d <= cfg.gate_threshold {
        LoopOutcome {
            candidate: cand,
            accepted: true,
            cause: None,
        }
    } else {
        reject(cand, "divergence above gate".into())
    }
}

fn reject(candidate: LoopCandidate, cause: String) -> LoopOutcome {
    LoopOutcome {
        candidate,
        accepted: false,
        cause: Some(cause),
    }
}

/// One line of the loop-event log.
#[derive(Clone, Debug, PartialEq)]
pub struct LoopEvent {
    pub timestamp: f64,
    pub query_node: usize,
    pub candidate: Option<LoopCandidate>,
    pub accepted: bool,
    pub cause: Option<String>,
}

impl fmt::Display for LoopEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.6} query={}", self.timestamp, self.query_node)?;
        match &self.candidate {
            Some(c) => {
                write!(f, " candidate={} d_sc={:.6} d_od={:.6}", c.candidate_node, c.d_sc, c.d_od)?;
                match c.divergence {
                    Some(d) => write!(f, " d_cs={d:.6}")?,
                    None => write!(f, " d_cs=nan")?,
                }
            }
            None => write!(f, " candidate=none d_sc=nan d_od=nan d_cs=nan")?,
        }
        write!(f, " {}", if self.accepted { "accepted" } else { "rejected" })?;
        if let Some(cause) = &self.cause {
            write!(f, " ({cause})")?;
        }
        Ok(())
    }
}
