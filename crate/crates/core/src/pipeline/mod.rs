//! The per-scan SLAM session.
//!
//! Each scan is filtered, turned into an NDT and added to the sliding window,
//! which is solved against the active submap. States leaving the window are
//! final; they drive the keyframe and submap rules, and every new keyframe
//! triggers a loop search over keyframes of closed submaps. Accepted loops
//! are added to the pose graph, which is then optimised and its correction
//! folded back into the active submap root.

pub mod config;

use std::collections::VecDeque;
use std::fmt;
use std::mem;
use std::sync::mpsc::{channel, Receiver, Sender};
use std::sync::Arc;
use std::thread::JoinHandle;

pub use config::{ConfigPreset, KeyframeConfig, NdtConfig, SlamConfig, SubmapConfig};

use crate::error::{Result, SlamError};
use crate::estimator::{build_problem, EstimatorConfig, WindowState};
use crate::frontend::{filter_scan, integrate_gyro, AugmentedPoint, GyroSample, ImuSegment, RadarScan};
use crate::harness::dataset::Dataset;
use crate::harness::trajectory::Trajectory;
use crate::loop_closure::{find_candidate, make_descriptor, refine_and_gate, registration_seeds, LoopConfig, LoopEvent};
use crate::ndt::{NdtGrid, NdtSubmap};
use crate::pose_graph::{KeyframeNode, PoseGraph};
use crate::se2::Pose2;

/// Where loop detection runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SessionMode {
    /// Inline on the calling thread; runs are reproducible bit for bit.
    Deterministic,
    /// On a worker thread; results are folded in at keyframe boundaries.
    Background,
}

/// Outcome of one `process_scan` call.
#[derive(Clone, Debug, PartialEq)]
pub struct ScanResult {
    pub timestamp: f64,
    /// Global pose of the newest state right after solving.
    pub pose: Pose2,
    /// Set when only the motion prediction could be used.
    pub degraded: bool,
    pub cost: f64,
    pub stage_iterations: Vec<usize>,
    pub correspondences: usize,
    pub points: usize,
}

impl fmt::Display for ScanResult {
    /// One diagnostics line: timestamp, pose, cost, iterations per stage,
    /// correspondences, filtered points and a quality flag.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let iters: Vec<String> = self.stage_iterations.iter().map(ToString::to_string).collect();
        write!(
            f,
            "{:.6} {:.6} {:.6} {:.6} {:.6e} {} {} {} {}",
            self.timestamp,
            self.pose.x(),
            self.pose.y(),
            self.pose.angle(),
            self.cost,
            if iters.is_empty() { "-".to_string() } else { iters.join(",") },
            self.correspondences,
            self.points,
            if self.degraded { "degraded" } else { "ok" }
        )
    }
}

/// Everything a finished session produces.
#[derive(Clone, Debug)]
pub struct SessionOutput {
    pub trajectory: Trajectory,
    pub graph: PoseGraph,
    pub loop_events: Vec<LoopEvent>,
    pub diagnostics: Vec<ScanResult>,
}

struct WindowEntry {
    state: WindowState,
    scan_index: usize,
    ndt: NdtGrid,
    /// Filtered points with raw intensities, body frame.
    points: Arc<Vec<AugmentedPoint>>,
    /// The same points with scaled intensities, as inserted into maps.
    scaled: Vec<AugmentedPoint>,
    imu: Option<ImuSegment>,
    keyframe: bool,
}

#[derive(Clone)]
struct ClosedSubmap {
    map: Arc<NdtSubmap>,
    root_node: usize,
}

/// Read-only inputs of one loop search.
struct LoopJob {
    query: KeyframeNode,
    query_ndt: NdtGrid,
    /// Scaled query points behind `query_ndt`.
    query_points: Vec<AugmentedPoint>,
    database: Vec<KeyframeNode>,
    /// Closed submaps indexed by id, with their current root poses.
    submaps: Vec<(ClosedSubmap, Pose2)>,
}

struct LoopResult {
    event: LoopEvent,
    /// `(root node, query node, query pose in the root frame)`.
    constraint: Option<(usize, usize, Pose2)>,
}

fn run_loop_job(job: &LoopJob, est: &EstimatorConfig, cfg: &LoopConfig) -> LoopResult {
    let mut event = LoopEvent {
        timestamp: job.query.timestamp,
        query_node: job.query.id,
        candidate: None,
        accepted: false,
        cause: None,
    };
    let cand = match find_candidate(&job.query, &job.database, cfg) {
        Ok(Some(c)) => c,
        Ok(None) => {
            event.cause = Some("no eligible keyframe".into());
            return LoopResult { event, constraint: None };
        }
        Err(e) => {
            event.cause = Some(e.to_string());
            return LoopResult { event, constraint: None };
        }
    };
    let (Some((closed, root_pose)), Some(cand_node)) = (
        job.submaps.get(cand.candidate_submap),
        job.database.iter().find(|n| n.id == cand.candidate_node),
    ) else {
        event.candidate = Some(cand);
        event.cause = Some("candidate submap unavailable".into());
        return LoopResult { event, constraint: None };
    };
    let seeds = registration_seeds(&job.query.pose, &cand_node.pose, root_pose, &cand, cfg);
    let outcome = refine_and_gate(cand, &job.query_ndt, &job.query_points, &closed.map, &seeds, est, cfg);
    let constraint = match (outcome.accepted, outcome.candidate.refined_transform) {
        (true, Some(rel)) => Some((closed.root_node, job.query.id, rel)),
        _ => None,
    };
    event.accepted = constraint.is_some();
    event.candidate = Some(outcome.candidate);
    event.cause = outcome.cause;
    LoopResult { event, constraint }
}

struct Worker {
    jobs: Option<Sender<LoopJob>>,
    results: Receiver<LoopResult>,
    handle: Option<JoinHandle<()>>,
    pending: usize,
}

impl Worker {
    fn spawn(est: EstimatorConfig, cfg: LoopConfig) -> Self {
        let (job_tx, job_rx) = channel::<LoopJob>();
        let (res_tx, res_rx) = channel();
        let handle = std::thread::spawn(move || {
            for job in job_rx {
                if res_tx.send(run_loop_job(&job, &est, &cfg)).is_err() {
                    break;
                }
            }
        });
        Worker {
            jobs: Some(job_tx),
            results: res_rx,
            handle: Some(handle),
            pending: 0,
        }
    }
}

impl Drop for Worker {
    fn drop(&mut self) {
        self.jobs.take();
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

pub struct SlamSession {
    cfg: SlamConfig,
    mode: SessionMode,
    gyro: Vec<GyroSample>,
    window: VecDeque<WindowEntry>,
    /// Last state that left the window, held fixed in the next solves.
    anchor: Option<WindowState>,
    active: NdtSubmap,
    active_root_node: usize,
    closed: Vec<ClosedSubmap>,
    graph: PoseGraph,
    /// Latest keyframe: node id and pose in the active submap frame.
    last_keyframe: (usize, Pose2),
    /// Timestamp and pre-correction global pose of each keyframe.
    keyframe_raw: Vec<(f64, Pose2)>,
    traveled: f64,
    /// Per-scan timestamp and global pose before graph corrections.
    records: Vec<(f64, Pose2)>,
    diagnostics: Vec<ScanResult>,
    loop_events: Vec<LoopEvent>,
    worker: Option<Worker>,
}

impl SlamSession {
    pub fn new(cfg: SlamConfig, mode: SessionMode) -> Result<Self> {
        cfg.validate()?;
        let worker = (mode == SessionMode::Background && cfg.loop_closure.enabled)
            .then(|| Worker::spawn(cfg.estimator.clone(), cfg.loop_closure.clone()));
        let active = NdtSubmap::new(0, Pose2::identity(), cfg.ndt.resolution, cfg.ndt.cell_params());
        Ok(SlamSession {
            cfg,
            mode,
            gyro: Vec::new(),
            window: VecDeque::new(),
            anchor: None,
            active,
            active_root_node: 0,
            closed: Vec::new(),
            graph: PoseGraph::new(),
            last_keyframe: (0, Pose2::identity()),
            keyframe_raw: Vec::new(),
            traveled: 0.0,
            records: Vec::new(),
            diagnostics: Vec::new(),
            loop_events: Vec::new(),
            worker,
        })
    }

    pub fn config(&self) -> &SlamConfig {
        &self.cfg
    }

    pub fn mode(&self) -> SessionMode {
        self.mode
    }

    pub fn graph(&self) -> &PoseGraph {
        &self.graph
    }

    pub fn loop_events(&self) -> &[LoopEvent] {
        &self.loop_events
    }

    pub fn diagnostics(&self) -> &[ScanResult] {
        &self.diagnostics
    }

    pub fn active_submap(&self) -> &NdtSubmap {
        &self.active
    }

    fn scaled(&self, points: &[AugmentedPoint]) -> Vec<AugmentedPoint> {
        let s = self.cfg.ndt.intensity_scale;
        points.iter().map(|p| AugmentedPoint::new(p.x, p.y, p.p * s)).collect()
    }

    fn keyframe_node(&self, id: usize, entry: &WindowEntry, pose: Pose2) -> KeyframeNode {
        let l = &self.cfg.loop_closure;
        KeyframeNode {
            id,
            pose,
            timestamp: entry.state.timestamp,
            submap_id: self.active.id,
            is_submap_root: false,
            traveled_distance: self.traveled,
            descriptor: Arc::new(make_descriptor(&entry.points, l.n_ring, l.n_sector, l.max_range)),
            scan: entry.points.clone(),
        }
    }

    /// Feeds one scan and the gyro samples received since the previous one.
    pub fn process_scan(&mut self, scan: &RadarScan, imu: &[GyroSample]) -> Result<ScanResult> {
        let t = scan.timestamp;
        if let Some(&(last, _)) = self.records.last() {
            if !(t > last) {
                return Err(SlamError::NonMonotoneTimestamp { last, got: t });
            }
        }
        for g in imu {
            if self.gyro.last().is_none_or(|l| g.timestamp > l.timestamp) {
                self.gyro.push(*g);
            }
        }

        let points = Arc::new(filter_scan(scan, &self.cfg.filter));
        let scaled = self.scaled(&points);
        let ndt = NdtGrid::from_points(&scaled, self.cfg.ndt.resolution, self.cfg.ndt.cell_params());
        let scan_index = self.records.len();

        if scan_index == 0 {
            return Ok(self.bootstrap(t, ndt, points, scaled));
        }

        if self.window.len() >= self.cfg.estimator.window_length {
            self.depart()?;
        }
        let prev = self.window.back().map(|e| e.state).or(self.anchor).expect("session has a state after bootstrap");
        let imu_seg = if self.gyro.is_empty() {
            None
        } else {
            integrate_gyro(&self.gyro, prev.timestamp, t).ok()
        };
        self.prune_gyro(prev.timestamp);
        let n_points = points.len();
        self.window.push_back(WindowEntry {
            state: prev.predict(t),
            scan_index,
            ndt,
            points,
            scaled,
            imu: imu_seg,
            keyframe: false,
        });

        let states: Vec<WindowState> = self.window.iter().map(|e| e.state).collect();
        let grids: Vec<&NdtGrid> = self.window.iter().map(|e| &e.ndt).collect();
        let segs: Vec<Option<ImuSegment>> = self.window.iter().map(|e| e.imu).collect();
        let mut result = ScanResult {
            timestamp: t,
            pose: Pose2::identity(),
            degraded: n_points == 0,
            cost: f64::NAN,
            stage_iterations: Vec::new(),
            correspondences: 0,
            points: n_points,
        };
        let solved = match build_problem(self.anchor, &states, &grids, &self.active.grid, &segs, &self.cfg.estimator) {
            Ok(problem) => Some(problem.solve()),
            Err(_) => None,
        };
        match solved {
            Some(report) => {
                result.degraded |= report.degraded;
                result.cost = report.final_cost;
                result.stage_iterations = report.stage_iterations;
                result.correspondences = report.correspondences;
                for (e, s) in self.window.iter_mut().zip(report.states) {
                    e.state = s;
                }
            }
            None => result.degraded = true,
        }
        let newest = self.window.back().expect("just pushed").state;
        result.pose = self.active.root_pose.compose(&newest.pose);
        self.records.push((t, result.pose));
        self.diagnostics.push(result.clone());
        Ok(result)
    }

    fn bootstrap(&mut self, t: f64, ndt: NdtGrid, points: Arc<Vec<AugmentedPoint>>, scaled: Vec<AugmentedPoint>) -> ScanResult {
        let entry = WindowEntry {
            state: WindowState::at_rest(Pose2::identity(), t),
            scan_index: 0,
            ndt,
            points,
            scaled,
            imu: None,
            keyframe: true,
        };
        self.active.insert_scan(&entry.scaled, &Pose2::identity());
        self.active.keyframe_ids.push(0);
        let node = self.keyframe_node(0, &entry, Pose2::identity());
        let mut node = node;
        node.is_submap_root = true;
        self.graph.add_node(node).expect("first node");
        self.keyframe_raw.push((t, Pose2::identity()));
        self.last_keyframe = (0, Pose2::identity());
        let result = ScanResult {
            timestamp: t,
            pose: Pose2::identity(),
            degraded: entry.points.is_empty(),
            cost: 0.0,
            stage_iterations: Vec::new(),
            correspondences: 0,
            points: entry.points.len(),
        };
        self.window.push_back(entry);
        self.records.push((t, Pose2::identity()));
        self.diagnostics.push(result.clone());
        result
    }

    fn prune_gyro(&mut self, keep_from: f64) {
        if self.gyro.len() > 4096 {
            let cut = self.gyro.partition_point(|g| g.timestamp < keep_from - 1.0);
            self.gyro.drain(..cut.saturating_sub(1));
        }
    }

    /// Retires the oldest window state; applies keyframe and submap rules.
    fn depart(&mut self) -> Result<()> {
        let Some(entry) = self.window.pop_front() else {
            return Ok(());
        };
        let local = entry.state.pose;
        let global = self.active.root_pose.compose(&local);
        self.records[entry.scan_index].1 = global;
        if let Some(prev) = self.anchor {
            self.traveled += prev.pose.between(&local).translation().norm();
        }
        self.anchor = Some(entry.state);
        if entry.keyframe {
            return Ok(());
        }

        let (kf_id, kf_local) = self.last_keyframe;
        let rel = kf_local.between(&local);
        let kf = &self.cfg.keyframe;
        if rel.translation().norm() <= kf.translation && rel.angle().abs() <= kf.rotation_deg.to_radians() {
            return Ok(());
        }
        self.drain_loop_results(false)?;
        // Corrections folded in above may have moved the root.
        let global = self.active.root_pose.compose(&local);
        self.records[entry.scan_index].1 = global;

        let id = self.graph.len();
        let node = self.keyframe_node(id, &entry, global);
        self.graph.add_node(node)?;
        self.graph.add_odometry_constraint(kf_id, id, rel, &self.cfg.graph)?;
        self.keyframe_raw.push((entry.state.timestamp, global));
        self.active.insert_scan(&entry.scaled, &local);
        self.active.keyframe_ids.push(id);
        self.last_keyframe = (id, local);

        if self.active.keyframe_ids.len() >= self.cfg.submap.max_keyframes {
            self.start_submap(id, &local, global, &entry.scaled);
        }
        if self.cfg.loop_closure.enabled {
            self.schedule_loop_search(id, entry.ndt, entry.scaled)?;
        }
        Ok(())
    }

    /// Closes the active submap and roots a new one at keyframe `id`.
    fn start_submap(&mut self, id: usize, local: &Pose2, global: Pose2, scaled: &[AugmentedPoint]) {
        let mut next = NdtSubmap::new(self.active.id + 1, global, self.cfg.ndt.resolution, self.cfg.ndt.cell_params());
        next.insert_scan(scaled, &Pose2::identity());
        next.keyframe_ids.push(id);
        let old = mem::replace(&mut self.active, next);
        self.closed.push(ClosedSubmap {
            map: Arc::new(old),
            root_node: self.active_root_node,
        });
        self.active_root_node = id;
        self.graph.nodes[id].is_submap_root = true;
        for e in self.window.iter_mut() {
            e.state = e.state.reanchored(local);
        }
        self.anchor = self.anchor.map(|a| a.reanchored(local));
        self.last_keyframe = (id, Pose2::identity());
    }

    fn schedule_loop_search(&mut self, id: usize, query_ndt: NdtGrid, query_points: Vec<AugmentedPoint>) -> Result<()> {
        let active_id = self.active.id;
        let database: Vec<KeyframeNode> = self
            .graph
            .nodes
            .iter()
            .filter(|n| n.submap_id < active_id && n.id != id && n.submap_id < self.closed.len())
            .cloned()
            .collect();
        let submaps = self
            .closed
            .iter()
            .map(|c| (c.clone(), self.graph.nodes[c.root_node].pose))
            .collect();
        let job = LoopJob {
            query: self.graph.nodes[id].clone(),
            query_ndt,
            query_points,
            database,
            submaps,
        };
        match &mut self.worker {
            Some(w) => {
                if let Some(tx) = &w.jobs {
                    if tx.send(job).is_ok() {
                        w.pending += 1;
                    }
                }
                Ok(())
            }
            None => {
                let res = run_loop_job(&job, &self.cfg.estimator, &self.cfg.loop_closure);
                self.apply_loop_result(res)
            }
        }
    }

    /// Folds finished background loop searches into the graph.
    fn drain_loop_results(&mut self, block: bool) -> Result<()> {
        loop {
            let Some(w) = &mut self.worker else {
                return Ok(());
            };
            if w.pending == 0 {
                return Ok(());
            }
            let res = if block { w.results.recv().ok() } else { w.results.try_recv().ok() };
            let Some(res) = res else {
                if block {
                    w.pending = 0;
                }
                return Ok(());
            };
            w.pending -= 1;
            self.apply_loop_result(res)?;
        }
    }

    fn apply_loop_result(&mut self, res: LoopResult) -> Result<()> {
        self.loop_events.push(res.event);
        if let Some((root, query, rel)) = res.constraint {
            self.graph.add_loop_constraint(root, query, rel, &self.cfg.graph)?;
            self.graph.optimize(&self.cfg.graph)?;
            self.propagate_correction();
        }
        Ok(())
    }

    /// Moves the active submap root to its optimised node pose; window
    /// states keep their submap-frame coordinates.
    pub fn propagate_correction(&mut self) {
        self.active.root_pose = self.graph.nodes[self.active_root_node].pose;
    }

    /// Flushes the window, waits for pending loop searches, runs a final
    /// graph optimisation and returns the corrected per-scan trajectory.
    pub fn finalize(mut self) -> Result<SessionOutput> {
        while !self.window.is_empty() {
            self.depart()?;
        }
        self.drain_loop_results(true)?;
        if self.graph.len() > 1 {
            self.graph.optimize(&self.cfg.graph)?;
        }
        self.propagate_correction();

        // Left corrections P_k G_k⁻¹ of the keyframes, interpolated in time.
        let corrections: Vec<(f64, Pose2)> = self
            .keyframe_raw
            .iter()
            .zip(&self.graph.nodes)
            .map(|(&(t, raw), node)| (t, node.pose.compose(&raw.inverse())))
            .collect();
        let correction_track = Trajectory::from_entries(corrections.clone())?;
        let mut trajectory = Trajectory::new();
        for &(t, raw) in &self.records {
            let c = match correction_track.interpolate(t) {
                Some(c) => c,
                None if corrections.first().is_some_and(|c| t < c.0) => corrections[0].1,
                None => corrections.last().map_or(Pose2::identity(), |c| c.1),
            };
            trajectory.push(t, c.compose(&raw))?;
        }
        let graph = mem::take(&mut self.graph);
        let loop_events = mem::take(&mut self.loop_events);
        let diagnostics = mem::take(&mut self.diagnostics);
        Ok(SessionOutput {
            trajectory,
            graph,
            loop_events,
            diagnostics,
        })
    }
}

/// Runs a whole dataset through a session, handing each scan the gyro
/// samples stamped up to its own timestamp.
pub fn run_dataset(cfg: &SlamConfig, data: &Dataset, mode: SessionMode) -> Result<SessionOutput> {
    let mut session = SlamSession::new(cfg.clone(), mode)?;
    let imu = data.imu.as_deref().unwrap_or(&[]);
    let mut k = 0;
    for scan in &data.scans {
        let end = k + imu[k..].partition_point(|g| g.timestamp <= scan.timestamp);
        session.process_scan(scan, &imu[k..end])?;
        k = end;
    }
    session.finalize()
}
