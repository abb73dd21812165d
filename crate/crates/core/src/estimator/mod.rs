//! Sliding-window state estimation.
//!
//! The last `l` states are optimised jointly against three kinds of terms:
//! the constant-velocity motion model, gyro yaw increments and NDT
//! registration of each state's scan against the active submap. The NDT terms
//! are wrapped in the adaptive robust loss and solved over a decreasing
//! sequence of scale controls `mu`, each stage with Levenberg-Marquardt.

pub mod blocks;
pub mod loss;

use nalgebra::{DMatrix, DVector, Matrix2};

use crate::error::{Result, SlamError};
use crate::frontend::ImuSegment;
use crate::ndt::NdtGrid;
use crate::se2::{Pose2, Twist2};

pub use blocks::{imu_cost, motion_cost, ndt_residual, Gaussian3, Matrix6, STATE_DIM};
pub use loss::{adaptive_loss, anneal_schedule, welsch_loss, RobustLossConfig};

/// Per-scan state: pose in the submap frame, body-frame velocity and the gyro
/// bias correction.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowState {
    pub pose: Pose2,
    pub velocity: Twist2,
    pub bias: f64,
    pub timestamp: f64,
}

impl WindowState {
    pub fn at_rest(pose: Pose2, timestamp: f64) -> Self {
        WindowState {
            pose,
            velocity: Twist2::zero(),
            bias: 0.0,
            timestamp,
        }
    }

    /// Constant-velocity prediction of the next state.
    pub fn predict(&self, timestamp: f64) -> WindowState {
        WindowState {
            pose: blocks::predict_pose(self, timestamp - self.timestamp),
            velocity: self.velocity,
            bias: self.bias,
            timestamp,
        }
    }

    /// The same state re-expressed after changing the reference frame so
    /// that `new_root` (given in the old frame) becomes the origin.
    pub fn reanchored(&self, new_root: &Pose2) -> WindowState {
        WindowState {
            pose: new_root.between(&self.pose),
            ..*self
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EstimatorConfig {
    pub window_length: usize,
    pub alpha: f64,
    pub c: f64,
    pub mu0: f64,
    pub k_mu: f64,
    pub w_ndt: f64,
    /// Information of `[pose tangent; velocity change]`.
    pub omega_mm: Matrix6,
    /// Information of `[yaw residual; bias change]`.
    pub omega_imu: Matrix2<f64>,
    pub k_neighbors: usize,
    pub max_lm_iterations: usize,
    /// Correspondence searches per annealing stage.
    pub correspondence_rounds: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        Self {
            window_length: 3,
            alpha: -2.0,
            c: 1.5,
            mu0: 16.0,
            k_mu: 4.0,
            w_ndt: 100.0,
            omega_mm: Matrix6::from_diagonal(&blocks::Vector6::new(400.0, 400.0, 400.0, 25.0, 25.0, 25.0)),
            omega_imu: Matrix2::new(2500.0, 0.0, 0.0, 1e6),
            k_neighbors: 4,
            max_lm_iterations: 30,
            correspondence_rounds: 2,
        }
    }
}

impl EstimatorConfig {
    pub fn anneal_schedule(&self) -> Vec<f64> {
        anneal_schedule(self.mu0, self.k_mu)
    }

    pub fn loss(&self, mu: f64) -> RobustLossConfig {
        RobustLossConfig {
            alpha: self.alpha,
            c: self.c,
            mu,
            ..RobustLossConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(SlamError::Config(m.to_string()));
        if self.window_length == 0 {
            return err("estimator.window_length must be at least 1");
        }
        if !(self.c > 0.0) {
            return err("estimator.c must be positive");
        }
        if !(self.mu0 >= 1.0) || !(self.k_mu > 1.0) {
            return err("estimator.mu0 must be >= 1 and estimator.k_mu > 1");
        }
        if self.k_neighbors == 0 {
            return err("estimator.k_neighbors must be at least 1");
        }
        if !(self.w_ndt >= 0.0) {
            return err("estimator.w_ndt must be non-negative");
        }
        if !is_psd(&DMatrix::from_column_slice(6, 6, self.omega_mm.as_slice()))
            || !is_psd(&DMatrix::from_column_slice(2, 2, self.omega_imu.as_slice()))
        {
            return err("information matrices must be symmetric positive semi-definite");
        }
        Ok(())
    }
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    if (m - m.transpose()).amax() > 1e-9 * m.amax().max(1.0) {
        return false;
    }
    m.clone().symmetric_eigen().eigenvalues.iter().all(|&l| l >= -1e-9)
}

/// Matched (scan cell, map cell) Gaussians, one list per free state.
pub type CorrespondenceSet = Vec<Vec<(Gaussian3, Gaussian3)>>;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CostBreakdown {
    pub ndt: f64,
    pub motion: f64,
    pub imu: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.ndt + self.motion + self.imu
    }
}

/// A window least-squares problem over borrowed scan NDTs and a submap.
#[derive(Clone, Debug)]
pub struct WindowProblem<'a> {
    /// Most recent state that left the window; held fixed.
    pub anchor: Option<WindowState>,
    pub initial: Vec<WindowState>,
    pub scans: Vec<&'a NdtGrid>,
    /// `imu[i]` links state `i` to its predecessor (anchor for `i == 0`).
    pub imu: Vec<Option<ImuSegment>>,
    pub submap: &'a NdtGrid,
    pub cfg: &'a EstimatorConfig,
    /// Motion-model terms between consecutive states.
    pub motion: bool,
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub states: Vec<WindowState>,
    pub final_cost: f64,
    pub stage_iterations: Vec<usize>,
    pub correspondences: usize,
    /// Set when the solution was rejected and the initial states returned.
    pub degraded: bool,
}

/// Assembles the window problem; fails when no scan cell can be matched.
pub fn build_problem<'a>(
    anchor: Option<WindowState>,
    window: &[WindowState],
    scan_ndts: &[&'a NdtGrid],
    submap: &'a NdtGrid,
    imu_segments: &[Option<ImuSegment>],
    cfg: &'a EstimatorConfig,
) -> Result<WindowProblem<'a>> {
    if window.is_empty() || window.len() > cfg.window_length {
        return Err(SlamError::Config(format!(
            "window holds {} states, expected 1..={}",
            window.len(),
            cfg.window_length
        )));
    }
    if scan_ndts.len() != window.len() || imu_segments.len() != window.len() {
        return Err(SlamError::Config("window, scan and IMU lengths differ".into()));
    }
    let mut last_t = anchor.map(|a| a.timestamp).unwrap_or(f64::NEG_INFINITY);
    for s in window {
        if !(s.timestamp > last_t) {
            return Err(SlamError::NonMonotoneTimestamp { last: last_t, got: s.timestamp });
        }
        last_t = s.timestamp;
    }
    if submap.usable_count() == 0 || scan_ndts.iter().all(|g| g.usable_count() == 0) {
        return Err(SlamError::NoCorrespondences);
    }
    Ok(WindowProblem {
        anchor,
        initial: window.to_vec(),
        scans: scan_ndts.to_vec(),
        imu: imu_segments.to_vec(),
        submap,
        cfg,
        motion: true,
    })
}

impl<'a> WindowProblem<'a> {
    fn dim(&self) -> usize {
        STATE_DIM * self.initial.len()
    }

    /// Nearest-distribution correspondences at the given states.
    pub fn correspondences(&self, states: &[WindowState]) -> CorrespondenceSet {
        let k = self.cfg.k_neighbors;
        states
            .iter()
            .zip(&self.scans)
            .map(|(s, scan)| {
                let mut pairs = Vec::new();
                for (_, cell) in scan.usable_cells() {
                    let q = s.pose.transform_point(&cell.xy());
                    for (_, m) in self.submap.nearest(&q, k) {
                        pairs.push((Gaussian3::from(cell), Gaussian3::from(m)));
                    }
                }
                pairs
            })
            .collect()
    }

    fn predecessor<'s>(&'s self, states: &'s [WindowState], i: usize) -> Option<&'s WindowState> {
        if i == 0 {
            self.anchor.as_ref()
        } else {
            states.get(i - 1)
        }
    }

    pub fn cost(&self, states: &[WindowState], corr: &CorrespondenceSet, mu: f64) -> CostBreakdown {
        let loss = self.cfg.loss(mu);
        let mut out = CostBreakdown::default();
        for (i, s) in states.iter().enumerate() {
            if !corr[i].is_empty() {
                let w = self.cfg.w_ndt / corr[i].len() as f64;
                for (a, b) in &corr[i] {
                    out.ndt += match blocks::ndt_r2(a, b, &s.pose) {
                        Ok(r2) => w * loss.loss(r2),
                        Err(_) => f64::INFINITY,
                    };
                }
            }
            if let Some(prev) = self.predecessor(states, i) {
                if self.motion {
                    out.motion += motion_cost(prev, s, &self.cfg.omega_mm);
                }
                if let Some(seg) = &self.imu[i] {
                    out.imu += imu_cost(prev, s, seg, &self.cfg.omega_imu);
                }
            }
        }
        out
    }

    /// Cost at `states` with correspondences searched at `states`.
    pub fn total_cost(&self, states: &[WindowState], mu: f64) -> f64 {
        let corr = self.correspondences(states);
        self.cost(states, &corr, mu).total()
    }

    fn linearize(&self, states: &[WindowState], corr: &CorrespondenceSet, mu: f64) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.dim();
        let mut h = DMatrix::zeros(n, n);
        let mut g = DVector::zeros(n);
        let loss = self.cfg.loss(mu);
        for (i, s) in states.iter().enumerate() {
            let o = STATE_DIM * i;
            if !corr[i].is_empty() {
                let w = self.cfg.w_ndt / corr[i].len() as f64;
                for (a, b) in &corr[i] {
                    let Ok(lin) = blocks::ndt_linearize(a, b, &s.pose) else {
                        continue;
                    };
                    let k = w * loss.derivative(lin.r2);
                    let mut gv = g.fixed_rows_mut::<3>(o);
                    gv += k * lin.gradient;
                    let mut hv = h.fixed_view_mut::<3, 3>(o, o);
                    hv += k * lin.gn_hessian;
                }
            }
            let Some(prev) = self.predecessor(states, i) else {
                continue;
            };
            let prev_free = i > 0;
            if self.motion {
                let (e, jp, jc) = blocks::motion_residual(prev, s);
                let om = &self.cfg.omega_mm;
                accumulate(&mut h, &mut g, &e, om, &jc, o, prev_free.then(|| (&jp, o - STATE_DIM)));
            }
            if let Some(seg) = &self.imu[i] {
                let (e, jp, jc) = blocks::imu_residual(prev, s, seg);
                let om = &self.cfg.omega_imu;
                accumulate(&mut h, &mut g, &e, om, &jc, o, prev_free.then(|| (&jp, o - STATE_DIM)));
            }
        }
        (h, g)
    }

    fn retract(&self, states: &[WindowState], delta: &DVector<f64>) -> Vec<WindowState> {
        states
            .iter()
            .enumerate()
            .map(|(i, s)| blocks::retract_state(s, &delta.as_slice()[STATE_DIM * i..STATE_DIM * (i + 1)]))
            .collect()
    }

    /// Levenberg-Marquardt at fixed `mu` and fixed correspondences.
    fn levenberg_marquardt(&self, mut states: Vec<WindowState>, corr: &CorrespondenceSet, mu: f64) -> (Vec<WindowState>, usize) {
        let mut cost = self.cost(&states, corr, mu).total();
        let mut lambda = 1e-4;
        let mut iterations = 0;
        while iterations < self.cfg.max_lm_iterations {
            iterations += 1;
            let (h, g) = self.linearize(&states, corr, mu);
            if g.norm() < 1e-8 {
                break;
            }
            let mut accepted = false;
            let mut converged = false;
            while lambda <= 1e12 {
                let mut a = h.clone();
                for k in 0..a.nrows() {
                    a[(k, k)] += lambda * h[(k, k)].max(1e-6);
                }
                let Some(chol) = a.cholesky() else {
                    lambda *= 10.0;
                    continue;
                };
                let delta = -chol.solve(&g);
                if delta.norm() < 1e-10 {
                    converged = true;
                    break;
                }
                let candidate = self.retract(&states, &delta);
                let c = self.cost(&candidate, corr, mu).total();
                if c < cost {
                    let gain = cost - c;
                    states = candidate;
                    cost = c;
                    lambda = (lambda / 10.0).max(1e-12);
                    accepted = true;
                    converged = gain <= 1e-12 * cost.abs().max(1e-300);
                    break;
                }
                lambda *= 10.0;
            }
            if !accepted || converged {
                break;
            }
        }
        (states, iterations)
    }

    /// Runs the annealing schedule from the initial states.
    pub fn solve(&self) -> SolveReport {
        let schedule = self.cfg.anneal_schedule();
        let mut states = self.initial.clone();
        let mut stage_iterations = Vec::with_capacity(schedule.len());
        for &mu in &schedule {
            let mut iters = 0;
            for _ in 0..self.cfg.correspondence_rounds.max(1) {
                let corr = self.correspondences(&states);
                let before = states.clone();
                let (next, it) = self.levenberg_marquardt(states, &corr, mu);
                states = next;
                iters += it;
                let moved = before.iter().zip(&states).any(|(a, b)| {
                    let d = a.pose.between(&b.pose);
                    d.translation().norm() > 1e-6 || d.angle().abs() > 1e-7
                });
                if !moved {
                    break;
                }
            }
            stage_iterations.push(iters);
        }

        let corr = self.correspondences(&states);
        let final_cost = self.cost(&states, &corr, 1.0).total();
        let initial_cost = self.cost(&self.initial, &corr, 1.0).total();
        let correspondences = corr.iter().map(Vec::len).sum();
        let finite = final_cost.is_finite() && states.iter().all(|s| s.pose.is_finite() && s.velocity.is_finite());
        if !finite || final_cost > initial_cost {
            return SolveReport {
                final_cost: self.total_cost(&self.initial, 1.0),
                states: self.initial.clone(),
                stage_iterations,
                correspondences,
                degraded: true,
            };
        }
        SolveReport {
            states,
            final_cost,
            stage_iterations,
            correspondences,
            degraded: false,
        }
    }
}

fn accumulate<const R: usize>(
    h: &mut DMatrix<f64>,
    g: &mut DVector<f64>,
    e: &nalgebra::SVector<f64, R>,
    omega: &nalgebra::SMatrix<f64, R, R>,
    j_cur: &nalgebra::SMatrix<f64, R, STATE_DIM>,
    o_cur: usize,
    prev: Option<(&nalgebra::SMatrix<f64, R, STATE_DIM>, usize)>,
) {
    let we = omega * e;
    let wjc = omega * j_cur;
    {
        let mut gv = g.fixed_rows_mut::<STATE_DIM>(o_cur);
        gv += 2.0 * j_cur.transpose() * we;
        let mut hv = h.fixed_view_mut::<STATE_DIM, STATE_DIM>(o_cur, o_cur);
        hv += 2.0 * j_cur.transpose() * wjc;
    }
    if let Some((j_prev, o_prev)) = prev {
        let mut gv = g.fixed_rows_mut::<STATE_DIM>(o_prev);
        gv += 2.0 * j_prev.transpose() * we;
        let hpp = 2.0 * j_prev.transpose() * omega * j_prev;
        let hpc = 2.0 * j_prev.transpose() * wjc;
        let mut v = h.fixed_view_mut::<STATE_DIM, STATE_DIM>(o_prev, o_prev);
        v += hpp;
        let mut v = h.fixed_view_mut::<STATE_DIM, STATE_DIM>(o_prev, o_cur);
        v += hpc;
        let mut v = h.fixed_view_mut::<STATE_DIM, STATE_DIM>(o_cur, o_prev);
        v += hpc.transpose();
    }
}

/// Result of aligning a single scan NDT to a target grid.
#[derive(Clone, Debug)]
pub struct Registration {
    pub pose: Pose2,
    pub cost: f64,
    pub stage_iterations: Vec<usize>,
    pub correspondences: usize,
    pub degraded: bool,
}

/// Single-pose NDT registration under the annealed robust loss.
pub fn register(scan: &NdtGrid, target: &NdtGrid, initial: &Pose2, cfg: &EstimatorConfig) -> Result<Registration> {
    let state = WindowState::at_rest(*initial, 0.0);
    let single = EstimatorConfig {
        window_length: 1,
        ..cfg.clone()
    };
    let mut problem = build_problem(None, &[state], &[scan], target, &[None], &single)?;
    problem.motion = false;
    let report = problem.solve();
    if report.correspondences == 0 {
        return Err(SlamError::NoCorrespondences);
    }
    Ok(Registration {
        pose: report.states[0].pose,
        cost: report.final_cost,
        stage_iterations: report.stage_iterations,
        correspondences: report.correspondences,
        degraded: report.degraded,
    })
}
