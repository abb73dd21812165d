//! Global keyframe graph with odometry and loop constraints.

pub mod solver;

use std::io::{self, Write};
use std::sync::Arc;

use nalgebra::{Matrix3, Vector3};

use crate::error::{Result, SlamError};
use crate::frontend::AugmentedPoint;
use crate::loop_closure::ScanContextDescriptor;
use crate::se2::{left_jacobian_inv, right_jacobian_inv, Pose2};

use solver::{reverse_cuthill_mckee, SkylineMatrix};

/// A graph node: a keyframe and the data the loop detector needs from it.
#[derive(Clone, Debug)]
pub struct KeyframeNode {
    pub id: usize,
    /// Global pose.
    pub pose: Pose2,
    pub timestamp: f64,
    pub submap_id: usize,
    pub is_submap_root: bool,
    pub traveled_distance: f64,
    pub descriptor: Arc<ScanContextDescriptor>,
    /// Filtered scan in the keyframe's body frame.
    pub scan: Arc<Vec<AugmentedPoint>>,
}

impl KeyframeNode {
    /// A node without descriptor or scan, for graph-only use.
    pub fn bare(id: usize, pose: Pose2) -> Self {
        Self {
            id,
            pose,
            timestamp: 0.0,
            submap_id: 0,
            is_submap_root: false,
            traveled_distance: 0.0,
            descriptor: Arc::new(ScanContextDescriptor::zeros(0, 0)),
            scan: Arc::new(Vec::new()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConstraintKind {
    Odometry,
    Loop,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Constraint {
    pub from_id: usize,
    pub to_id: usize,
    /// Measured `between(from, to)`.
    pub relative_pose: Pose2,
    pub information: Matrix3<f64>,
    pub kind: ConstraintKind,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GraphConfig {
    pub omega_od: Matrix3<f64>,
    pub omega_lo: Matrix3<f64>,
    pub max_iterations: usize,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            omega_od: Matrix3::from_diagonal(&Vector3::new(100.0, 100.0, 400.0)),
            omega_lo: Matrix3::from_diagonal(&Vector3::new(25.0, 25.0, 100.0)),
            max_iterations: 50,
        }
    }
}

impl GraphConfig {
    pub fn validate(&self) -> Result<()> {
        for m in [&self.omega_od, &self.omega_lo] {
            check_information(m)?;
        }
        Ok(())
    }
}

fn check_information(m: &Matrix3<f64>) -> Result<()> {
    let sym = (m - m.transpose()).amax() <= 1e-9 * m.amax().max(1.0);
    if !sym || m.symmetric_eigen().eigenvalues.min() < -1e-9 {
        return Err(SlamError::Config("information matrix must be symmetric PSD".into()));
    }
    Ok(())
}

/// `Log(Z⁻¹ A⁻¹ B)` for measurement `Z` between poses `A` and `B`.
pub fn edge_error(relative: &Pose2, pose_a: &Pose2, pose_b: &Pose2) -> Vector3<f64> {
    relative.between(&pose_a.between(pose_b)).log().to_vector()
}

/// Error and Jacobians with respect to right perturbations of `A` and `B`.
pub fn edge_jacobians(relative: &Pose2, pose_a: &Pose2, pose_b: &Pose2) -> (Vector3<f64>, Matrix3<f64>, Matrix3<f64>) {
    let e = relative.between(&pose_a.between(pose_b)).log();
    let ja = -left_jacobian_inv(&e) * relative.inverse().adjoint();
    let jb = right_jacobian_inv(&e);
    (e.to_vector(), ja, jb)
}

#[derive(Clone, Debug, Default)]
pub struct OptimizeReport {
    pub iterations: usize,
    /// Cost before optimisation followed by the cost after each accepted step.
    pub costs: Vec<f64>,
}

#[derive(Clone, Debug, Default)]
pub struct PoseGraph {
    pub nodes: Vec<KeyframeNode>,
    pub constraints: Vec<Constraint>,
}

impl PoseGraph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Appends a node; its id must equal its creation index.
    pub fn add_node(&mut self, node: KeyframeNode) -> Result<usize> {
        if node.id != self.nodes.len() {
            return Err(SlamError::UnknownNode(node.id));
        }
        self.nodes.push(node);
        Ok(self.nodes.len() - 1)
    }

    pub fn node(&self, id: usize) -> Result<&KeyframeNode> {
        self.nodes.get(id).ok_or(SlamError::UnknownNode(id))
    }

    pub fn poses(&self) -> Vec<Pose2> {
        self.nodes.iter().map(|n| n.pose).collect()
    }

    pub fn add_constraint(&mut self, from: usize, to: usize, relative: Pose2, information: Matrix3<f64>, kind: ConstraintKind) -> Result<()> {
        for id in [from, to] {
            if id >= self.nodes.len() {
                return Err(SlamError::UnknownNode(id));
            }
        }
        if from == to {
            return Err(SlamError::Config(format!("constraint from node {from} to itself")));
        }
        check_information(&information)?;
        self.constraints.push(Constraint {
            from_id: from,
            to_id: to,
            relative_pose: relative,
            information,
            kind,
        });
        Ok(())
    }

    pub fn add_odometry_constraint(&mut self, from: usize, to: usize, relative: Pose2, cfg: &GraphConfig) -> Result<()> {
        self.add_constraint(from, to, relative, cfg.omega_od, ConstraintKind::Odometry)
    }

    pub fn add_loop_constraint(&mut self, from: usize, to: usize, relative: Pose2, cfg: &GraphConfig) -> Result<()> {
        self.add_constraint(from, to, relative, cfg.omega_lo, ConstraintKind::Loop)
    }

    pub fn loop_count(&self) -> usize {
        self.constraints.iter().filter(|c| c.kind == ConstraintKind::Loop).count()
    }

    fn cost_at(&self, poses: &[Pose2]) -> f64 {
        self.constraints
            .iter()
            .map(|c| {
                let e = edge_error(&c.relative_pose, &poses[c.from_id], &poses[c.to_id]);
                e.dot(&(c.information * e))
            })
            .sum()
    }

    /// Sum of squared Mahalanobis edge errors at the current poses.
    pub fn total_cost(&self) -> f64 {
        self.cost_at(&self.poses())
    }

    /// Node ids not reachable from node 0.
    pub fn orphans(&self) -> Vec<usize> {
        let n = self.nodes.len();
        if n == 0 {
            return Vec::new();
        }
        let adj = self.adjacency();
        let mut seen = vec![false; n];
        seen[0] = true;
        let mut stack = vec![0];
        while let Some(v) = stack.pop() {
            for &w in &adj[v] {
                if !seen[w] {
                    seen[w] = true;
                    stack.push(w);
                }
            }
        }
        (0..n).filter(|&i| !seen[i]).collect()
    }

    fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for c in &self.constraints {
            adj[c.from_id].push(c.to_id);
            adj[c.to_id].push(c.from_id);
        }
        adj
    }

    /// Levenberg-Marquardt over all nodes except node 0, which anchors the
    /// gauge and is never modified.
    pub fn optimize(&mut self, cfg: &GraphConfig) -> Result<OptimizeReport> {
        let orphans = self.orphans();
        if !orphans.is_empty() {
            return Err(SlamError::Disconnected(orphans));
        }
        let n = self.nodes.len();
        let mut poses = self.poses();
        let mut report = OptimizeReport {
            iterations: 0,
            costs: vec![self.cost_at(&poses)],
        };
        if n < 2 || self.constraints.is_empty() {
            return Ok(report);
        }

        // Block ordering of the free nodes 1..n.
        let free_adj: Vec<Vec<usize>> = self.adjacency()[1..]
            .iter()
            .map(|a| a.iter().filter(|&&w| w > 0).map(|&w| w - 1).collect())
            .collect();
        let order = reverse_cuthill_mckee(&free_adj);
        let mut block_of = vec![usize::MAX; n];
        for (k, &v) in order.iter().enumerate() {
            block_of[v + 1] = k;
        }
        let dim = 3 * (n - 1);
        let mut first: Vec<usize> = (0..dim).map(|i| 3 * (i / 3)).collect();
        for c in &self.constraints {
            if c.from_id == 0 || c.to_id == 0 {
                continue;
            }
            let (a, b) = (block_of[c.from_id], block_of[c.to_id]);
            let (lo, hi) = (a.min(b), a.max(b));
            for r in 0..3 {
                first[3 * hi + r] = first[3 * hi + r].min(3 * lo);
            }
        }

        let mut cost = report.costs[0];
        let mut lambda = 1e-4;
        while report.iterations < cfg.max_iterations {
            report.iterations += 1;
            let mut h = SkylineMatrix::with_profile(first.clone());
            let mut g = vec![0.0; dim];
            for c in &self.constraints {
                let (e, ja, jb) = edge_jacobians(&c.relative_pose, &poses[c.from_id], &poses[c.to_id]);
                let we = c.information * e;
                let blocks = [(c.from_id, ja), (c.to_id, jb)];
                for &(id_i, ji) in &blocks {
                    if id_i == 0 {
                        continue;
                    }
                    let bi = block_of[id_i];
                    let gi = 2.0 * ji.transpose() * we;
                    for r in 0..3 {
                        g[3 * bi + r] += gi[r];
                    }
                    for &(id_j, jj) in &blocks {
                        if id_j == 0 || block_of[id_j] > bi {
                            continue;
                        }
                        let bj = block_of[id_j];
                        let hij = 2.0 * ji.transpose() * c.information * jj;
                        for r in 0..3 {
                            for s in 0..3 {
                                let (row, col) = (3 * bi + r, 3 * bj + s);
                                if col <= row {
                                    h.add(row, col, hij[(r, s)]);
                                }
                            }
                        }
                    }
                }
            }
            let gnorm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if gnorm < 1e-8 {
                break;
            }

            let mut accepted = false;
            let mut converged = false;
            while lambda <= 1e12 {
                let mut damped = h.clone();
                for i in 0..dim {
                    damped.add(i, i, lambda * h.get(i, i).max(1e-6));
                }
                let Some(chol) = damped.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let delta: Vec<f64> = chol.solve(&g).into_iter().map(|v| -v).collect();
                let step = delta.iter().map(|v| v * v).sum::<f64>().sqrt();
                if step < 1e-12 {
                    converged = true;
                    break;
                }
                let candidate: Vec<Pose2> = poses
                    .iter()
                    .enumerate()
                    .map(|(id, p)| {
                        if id == 0 {
                            *p
                        } else {
                            let b = 3 * block_of[id];
                            p.retract(&Vector3::new(delta[b], delta[b + 1], delta[b + 2]))
                        }
                    })
                    .collect();
                let c = self.cost_at(&candidate);
                if c < cost {
                    converged = cost - c <= 1e-12 * cost;
                    poses = candidate;
                    cost = c;
                    report.costs.push(c);
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted || converged {
                break;
            }
        }
        for (node, pose) in self.nodes.iter_mut().zip(poses).skip(1) {
            node.pose = pose;
        }
        Ok(report)
    }

    /// `VERTEX_SE2` and `EDGE_SE2` lines; the information matrix is written
    /// as its upper triangle.
    pub fn write_g2o<W: Write>(&self, mut w: W) -> io::Result<()> {
        for n in &self.nodes {
            writeln!(w, "VERTEX_SE2 {} {} {} {}", n.id, n.pose.x(), n.pose.y(), n.pose.angle())?;
        }
        for c in &self.constraints {
            let z = &c.relative_pose;
            let i = &c.information;
            writeln!(
                w,
                "EDGE_SE2 {} {} {} {} {} {} {} {} {} {} {}",
                c.from_id,
                c.to_id,
                z.x(),
                z.y(),
                z.angle(),
                i[(0, 0)],
                i[(0, 1)],
                i[(0, 2)],
                i[(1, 1)],
                i[(1, 2)],
                i[(2, 2)]
            )?;
        }
        Ok(())
    }
}
