//! Per-frame core workflow and the lower-frequency refinement pass.
//!
//! The core loop registers every incoming scan against the global map and
//! fuses it in, emitting one pose per frame. Batches of aligned frames are
//! handed to the refinement stage, which re-registers the denser aggregated
//! clouds against its own map with a larger iteration budget and feeds pose
//! corrections back onto the core trajectory.

use std::collections::VecDeque;
use std::sync::{Condvar, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::geometry::{PointCloud, PoseSE3};
use crate::gp::KernelConfig;
use crate::grid::GridConfig;
use crate::mapstore::GPMap;
use crate::registration::{register_scan, MatchConfig};

#[derive(Clone, Debug)]
pub struct FramePacket {
    pub seq: usize,
    pub timestamp: f64,
    /// Sensor-frame scan.
    pub scan: PointCloud,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialGuessMode {
    Identity,
    /// Replay the previous relative transform.
    ConstantVelocity,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct PipelineConfig {
    /// Frames aggregated per refinement batch.
    pub refine_batch: usize,
    pub refine_enabled: bool,
    pub core_outer_iters: usize,
    pub refine_outer_iters: usize,
    pub initial_guess_mode: InitialGuessMode,
    /// Bounded refinement queue length for the threaded runner.
    pub queue_capacity: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            refine_batch: 5,
            refine_enabled: false,
            core_outer_iters: 5,
            refine_outer_iters: 10,
            initial_guess_mode: InitialGuessMode::ConstantVelocity,
            queue_capacity: 8,
        }
    }
}

/// Per-frame wall-time of the four core modules, milliseconds.
#[derive(Clone, Copy, Debug, Default)]
pub struct FrameStats {
    pub seq: usize,
    pub t_preprocess_ms: f64,
    pub t_match_ms: f64,
    pub t_align_ms: f64,
    pub t_update_ms: f64,
    /// Registration failed on this frame; the initial guess was kept.
    pub flagged: bool,
}

impl FrameStats {
    /// One stats line: `seq t_preprocess_ms t_match_ms t_align_ms t_update_ms`.
    pub fn line(&self) -> String {
        format!(
            "{} {:.3} {:.3} {:.3} {:.3}",
            self.seq, self.t_preprocess_ms, self.t_match_ms, self.t_align_ms, self.t_update_ms
        )
    }
}

/// Aggregated world-frame cloud of one batch plus the core pose at its last
/// frame.
#[derive(Clone, Debug)]
pub struct RefineBatch {
    pub end_seq: usize,
    pub end_timestamp: f64,
    pub core_pose: PoseSE3,
    pub world_cloud: PointCloud,
}

#[derive(Clone, Debug)]
pub struct CoreResult {
    /// One `(timestamp, pose)` per frame.
    pub trajectory: Vec<(f64, PoseSE3)>,
    pub map: GPMap,
    pub stats: Vec<FrameStats>,
}

/// Core workflow over a frame stream. `on_batch` receives one aggregated
/// batch per `refine_batch` frames, built from the core pose estimates.
pub fn run_core_with<F: FnMut(RefineBatch)>(
    frames: &[FramePacket],
    grid: GridConfig,
    kernel: KernelConfig,
    match_cfg: &MatchConfig,
    pipe: &PipelineConfig,
    mut on_batch: F,
) -> CoreResult {
    assert!(!frames.is_empty(), "nonempty frame stream required");
    let mut match_cfg = *match_cfg;
    match_cfg.max_outer_iters = pipe.core_outer_iters;

    let mut map = GPMap::new(grid, kernel);
    let mut trajectory: Vec<(f64, PoseSE3)> = Vec::with_capacity(frames.len());
    let mut stats = Vec::with_capacity(frames.len());
    let mut batch_scans: Vec<(usize, PointCloud)> = Vec::new();

    for frame in frames {
        let seq = frame.seq;
        let mut st = FrameStats {
            seq,
            ..FrameStats::default()
        };

        let pose = if trajectory.is_empty() {
            // First frame initializes the map at the origin.
            let t0 = Instant::now();
            let frame_map = GPMap::from_cloud(&frame.scan, grid, kernel);
            st.t_preprocess_ms = ms(t0);
            let t1 = Instant::now();
            map = frame_map;
            st.t_update_ms = ms(t1);
            PoseSE3::identity()
        } else {
            let guess = initial_guess(pipe.initial_guess_mode, &trajectory);
            match register_scan(&frame.scan, &map, guess, &match_cfg) {
                Ok(reg) => {
                    st.t_preprocess_ms = reg.timing.preprocess.as_secs_f64() * 1e3;
                    st.t_match_ms = reg.timing.matching.as_secs_f64() * 1e3;
                    st.t_align_ms = reg.timing.align.as_secs_f64() * 1e3;
                    let t1 = Instant::now();
                    map.fuse_frame(reg.frame);
                    st.t_update_ms = ms(t1);
                    reg.pose
                }
                Err(_) => {
                    // Degenerate frame: keep the guess, still fuse the scan.
                    st.flagged = true;
                    let t0 = Instant::now();
                    let world: PointCloud =
                        frame.scan.iter().map(|p| guess.transform(p)).collect();
                    let frame_map = GPMap::from_cloud(&world, grid, kernel);
                    st.t_preprocess_ms = ms(t0);
                    let t1 = Instant::now();
                    map.fuse_frame(frame_map);
                    st.t_update_ms = ms(t1);
                    guess
                }
            }
        };

        trajectory.push((frame.timestamp, pose));
        stats.push(st);

        batch_scans.push((trajectory.len() - 1, frame.scan.clone()));
        if batch_scans.len() >= pipe.refine_batch {
            let mut world_cloud = Vec::new();
            for (i, scan) in batch_scans.drain(..) {
                let p = trajectory[i].1;
                world_cloud.extend(scan.iter().map(|pt| p.transform(pt)));
            }
            on_batch(RefineBatch {
                end_seq: seq,
                end_timestamp: frame.timestamp,
                core_pose: pose,
                world_cloud,
            });
        }
    }

    CoreResult {
        trajectory,
        map,
        stats,
    }
}

pub fn run_core(
    frames: &[FramePacket],
    grid: GridConfig,
    kernel: KernelConfig,
    match_cfg: &MatchConfig,
    pipe: &PipelineConfig,
) -> CoreResult {
    run_core_with(frames, grid, kernel, match_cfg, pipe, |_| {})
}

fn ms(t: Instant) -> f64 {
    t.elapsed().as_secs_f64() * 1e3
}

fn initial_guess(mode: InitialGuessMode, trajectory: &[(f64, PoseSE3)]) -> PoseSE3 {
    let last = trajectory[trajectory.len() - 1].1;
    match mode {
        InitialGuessMode::Identity => last,
        InitialGuessMode::ConstantVelocity => {
            if trajectory.len() < 2 {
                last
            } else {
                let prev = trajectory[trajectory.len() - 2].1;
                let delta = last.compose(&prev.inverse());
                delta.compose(&last)
            }
        }
    }
}

/// Compose a refinement result onto a later core pose:
/// `refined_at_batch ∘ inverse(core_at_batch) ∘ subsequent_core`.
pub fn integrate_poses(
    core_pose_at_batch: &PoseSE3,
    refined_pose_at_batch: &PoseSE3,
    subsequent_core_pose: &PoseSE3,
) -> PoseSE3 {
    refined_pose_at_batch
        .compose(&core_pose_at_batch.inverse())
        .compose(subsequent_core_pose)
}

/// Pose correction produced by one refinement batch.
#[derive(Clone, Copy, Debug)]
pub struct Correction {
    pub end_seq: usize,
    pub core_pose: PoseSE3,
    pub refined_pose: PoseSE3,
}

/// Incremental refinement state: an independent map built from aggregated
/// batch clouds, registered with a larger iteration budget.
pub struct Refiner {
    map: GPMap,
    match_cfg: MatchConfig,
    /// Cumulative correction `refined ∘ core^-1` of the last good batch.
    delta: PoseSE3,
    pub corrections: Vec<Correction>,
    pub failed_batches: usize,
}

impl Refiner {
    pub fn new(
        grid: GridConfig,
        kernel: KernelConfig,
        match_cfg: &MatchConfig,
        pipe: &PipelineConfig,
    ) -> Refiner {
        let mut cfg = *match_cfg;
        cfg.max_outer_iters = pipe.refine_outer_iters;
        Refiner {
            map: GPMap::new(grid, kernel),
            match_cfg: cfg,
            delta: PoseSE3::identity(),
            corrections: Vec::new(),
            failed_batches: 0,
        }
    }

    pub fn process_batch(&mut self, batch: RefineBatch) {
        // The batch cloud is aggregated under core estimates; express it in
        // the batch-end frame, then register with the corrected guess.
        let local: PointCloud = {
            let inv = batch.core_pose.inverse();
            batch.world_cloud.iter().map(|p| inv.transform(p)).collect()
        };
        let guess = self.delta.compose(&batch.core_pose);

        let (refined_pose, frame) = if self.map.is_empty() {
            let world: PointCloud = local.iter().map(|p| guess.transform(p)).collect();
            (guess, GPMap::from_cloud(&world, self.map.grid, self.map.kernel))
        } else {
            match register_scan(&local, &self.map, guess, &self.match_cfg) {
                Ok(reg) => (reg.pose, reg.frame),
                Err(_) => {
                    // Failed batch: the core segment stays uncorrected.
                    self.failed_batches += 1;
                    return;
                }
            }
        };

        self.map.fuse_frame(frame);
        self.delta = refined_pose.compose(&batch.core_pose.inverse());
        self.corrections.push(Correction {
            end_seq: batch.end_seq,
            core_pose: batch.core_pose,
            refined_pose,
        });
    }

    pub fn into_parts(self) -> (GPMap, Vec<Correction>, usize) {
        (self.map, self.corrections, self.failed_batches)
    }
}

#[derive(Debug)]
pub struct RefineResult {
    pub trajectory: Vec<(f64, PoseSE3)>,
    pub map: GPMap,
    pub corrections: Vec<Correction>,
    pub failed_batches: usize,
}

/// Refinement over a finished batch stream, single-threaded and
/// deterministic.
pub fn run_refinement(
    batches: Vec<RefineBatch>,
    core_trajectory: &[(f64, PoseSE3)],
    core_seqs: &[usize],
    grid: GridConfig,
    kernel: KernelConfig,
    match_cfg: &MatchConfig,
    pipe: &PipelineConfig,
) -> RefineResult {
    let mut refiner = Refiner::new(grid, kernel, match_cfg, pipe);
    for batch in batches {
        refiner.process_batch(batch);
    }
    let (map, corrections, failed_batches) = refiner.into_parts();
    let trajectory = corrected_trajectory(core_trajectory, core_seqs, &corrections);
    RefineResult {
        trajectory,
        map,
        corrections,
        failed_batches,
    }
}

/// Apply each batch correction to every core pose at or after the batch end.
pub fn corrected_trajectory(
    core_trajectory: &[(f64, PoseSE3)],
    core_seqs: &[usize],
    corrections: &[Correction],
) -> Vec<(f64, PoseSE3)> {
    core_trajectory
        .iter()
        .zip(core_seqs)
        .map(|(&(ts, pose), &seq)| {
            let applicable = corrections.iter().rev().find(|c| c.end_seq <= seq);
            let corrected = match applicable {
                Some(c) => integrate_poses(&c.core_pose, &c.refined_pose, &pose),
                None => pose,
            };
            (ts, corrected)
        })
        .collect()
}

#[derive(Debug)]
pub struct PipelineResult {
    pub core: CoreResult,
    pub refined: Option<RefineResult>,
    pub dropped_batches: usize,
}

impl PipelineResult {
    /// The refined trajectory when available, the core trajectory otherwise.
    pub fn trajectory(&self) -> &[(f64, PoseSE3)] {
        match &self.refined {
            Some(r) => &r.trajectory,
            None => &self.core.trajectory,
        }
    }
}

/// Offline pipeline: core workflow, then (optionally) refinement over the
/// collected batches. Deterministic for a fixed input.
pub fn run_pipeline(
    frames: &[FramePacket],
    grid: GridConfig,
    kernel: KernelConfig,
    match_cfg: &MatchConfig,
    pipe: &PipelineConfig,
) -> PipelineResult {
    let mut batches = Vec::new();
    let core = run_core_with(frames, grid, kernel, match_cfg, pipe, |b| batches.push(b));
    let refined = if pipe.refine_enabled {
        let seqs: Vec<usize> = frames.iter().map(|f| f.seq).collect();
        Some(run_refinement(
            batches,
            &core.trajectory,
            &seqs,
            grid,
            kernel,
            match_cfg,
            pipe,
        ))
    } else {
        None
    };
    PipelineResult {
        core,
        refined,
        dropped_batches: 0,
    }
}

/// Bounded handoff queue between the core and refinement workers. The
/// producer never blocks: on overflow the oldest batch is dropped.
pub struct BoundedQueue<T> {
    state: Mutex<QueueState<T>>,
    cv: Condvar,
    capacity: usize,
}

struct QueueState<T> {
    items: VecDeque<T>,
    closed: bool,
    dropped: usize,
}

impl<T> BoundedQueue<T> {
    pub fn new(capacity: usize) -> Self {
        BoundedQueue {
            state: Mutex::new(QueueState {
                items: VecDeque::new(),
                closed: false,
                dropped: 0,
            }),
            cv: Condvar::new(),
            capacity: capacity.max(1),
        }
    }

    pub fn push(&self, item: T) {
        let mut s = self.state.lock().unwrap();
        if s.items.len() >= self.capacity {
            s.items.pop_front();
            s.dropped += 1;
        }
        s.items.push_back(item);
        self.cv.notify_one();
    }

    /// Blocks until an item is available or the queue is closed and drained.
    pub fn pop(&self) -> Option<T> {
        let mut s = self.state.lock().unwrap();
        loop {
            if let Some(item) = s.items.pop_front() {
                return Some(item);
            }
            if s.closed {
                return None;
            }
            s = self.cv.wait(s).unwrap();
        }
    }

    pub fn close(&self) {
        self.state.lock().unwrap().closed = true;
        self.cv.notify_all();
    }

    pub fn dropped(&self) -> usize {
        self.state.lock().unwrap().dropped
    }
}

/// Two-worker pipeline: the core runs on the calling thread, refinement on a
/// spawned thread behind a bounded queue. The core never blocks on
/// refinement; overflowing batches are dropped (oldest first) and counted.
/// Core frames are never dropped.
pub fn run_threaded(
    frames: &[FramePacket],
    grid: GridConfig,
    kernel: KernelConfig,
    match_cfg: &MatchConfig,
    pipe: &PipelineConfig,
) -> PipelineResult {
    if !pipe.refine_enabled {
        return run_pipeline(frames, grid, kernel, match_cfg, pipe);
    }
    let queue = BoundedQueue::new(pipe.queue_capacity);
    let (core, refiner) = std::thread::scope(|scope| {
        let worker = scope.spawn(|| {
            let mut refiner = Refiner::new(grid, kernel, match_cfg, pipe);
            while let Some(batch) = queue.pop() {
                refiner.process_batch(batch);
            }
            refiner
        });
        let core = run_core_with(frames, grid, kernel, match_cfg, pipe, |b| queue.push(b));
        queue.close();
        (core, worker.join().expect("refinement worker panicked"))
    });
    let dropped_batches = queue.dropped();
    let (map, corrections, failed_batches) = refiner.into_parts();
    let seqs: Vec<usize> = frames.iter().map(|f| f.seq).collect();
    let trajectory = corrected_trajectory(&core.trajectory, &seqs, &corrections);
    PipelineResult {
        core,
        refined: Some(RefineResult {
            trajectory,
            map,
            corrections,
            failed_batches,
        }),
        dropped_batches,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Point3;
    use nalgebra::{UnitQuaternion, Vector3};
    use rand::{Rng, SeedableRng};

    fn sized_room_scan(
        (lx, ly, lz): (f64, f64, f64),
        pose: &PoseSE3,
        seed: u64,
        n_per_face: usize,
        noise: f64,
    ) -> PointCloud {
        // World-frame room surface points, expressed in the sensor frame.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut world = Vec::new();
        for _ in 0..n_per_face {
            world.push(Point3::new(0.0, rng.random_range(0.0..ly), rng.random_range(0.0..lz)));
            world.push(Point3::new(lx, rng.random_range(0.0..ly), rng.random_range(0.0..lz)));
            world.push(Point3::new(rng.random_range(0.0..lx), 0.0, rng.random_range(0.0..lz)));
            world.push(Point3::new(rng.random_range(0.0..lx), ly, rng.random_range(0.0..lz)));
            world.push(Point3::new(rng.random_range(0.0..lx), rng.random_range(0.0..ly), 0.0));
            world.push(Point3::new(rng.random_range(0.0..lx), rng.random_range(0.0..ly), lz));
        }
        let inv = pose.inverse();
        world
            .iter()
            .map(|p| {
                let q = inv.transform(p);
                Point3::new(
                    q.x + noise * rng.random_range(-1.0..1.0),
                    q.y + noise * rng.random_range(-1.0..1.0),
                    q.z + noise * rng.random_range(-1.0..1.0),
                )
            })
            .collect()
    }

    fn room_scan(pose: &PoseSE3, seed: u64, n_per_face: usize, noise: f64) -> PointCloud {
        sized_room_scan((6.0, 4.0, 3.0), pose, seed, n_per_face, noise)
    }

    fn default_cfgs() -> (GridConfig, KernelConfig, MatchConfig, PipelineConfig) {
        (
            GridConfig::default(),
            KernelConfig::default(),
            MatchConfig::default(),
            PipelineConfig::default(),
        )
    }

    #[test]
    fn single_frame_stream_initializes_map_at_origin() {
        let (grid, kernel, mc, pc) = default_cfgs();
        let frames = vec![FramePacket {
            seq: 0,
            timestamp: 0.0,
            scan: room_scan(&PoseSE3::identity(), 1, 200, 0.0),
        }];
        let res = run_core(&frames, grid, kernel, &mc, &pc);
        assert_eq!(res.trajectory.len(), 1);
        assert!(res.trajectory[0].1.translation_norm() < 1e-12);
        assert!(!res.map.is_empty());
        let frame_map = GPMap::from_cloud(&frames[0].scan, grid, kernel);
        assert_eq!(res.map.sample_count(), frame_map.sample_count());
    }

    #[test]
    fn static_sensor_stays_put_and_variances_shrink() {
        let (grid, kernel, mc, pc) = default_cfgs();
        // A hall large enough that corner cells (whose mixed surfaces blur
        // the per-direction predictions) are a small fraction of the map.
        let pose = PoseSE3::from_translation(Vector3::new(6.0, 4.5, 2.25));
        let frames: Vec<FramePacket> = (0..10)
            .map(|k| FramePacket {
                seq: k,
                timestamp: k as f64 * 0.1,
                scan: sized_room_scan((12.0, 9.0, 4.5), &pose, 100 + k as u64, 8000, 0.01),
            })
            .collect();
        let res = run_core(&frames, grid, kernel, &mc, &pc);
        // Frame 0 anchors the map, so a static sensor should stay at the
        // identity for the whole run.
        for (k, (_, p)) in res.trajectory.iter().enumerate() {
            assert!(
                p.translation_norm() < 0.02,
                "frame {k}: drift {}",
                p.translation_norm()
            );
            assert!(p.rotation_angle() < 0.2_f64.to_radians());
        }
        // Map variances only shrink at shared locations: spot-check the
        // map-wide minimum against the single-frame minimum.
        let single = GPMap::from_cloud(&frames[0].scan, grid, kernel);
        let min_var = |m: &GPMap| {
            m.cells
                .values()
                .flat_map(|c| c.layers.iter().flat_map(|l| l.samples.iter().map(|s| s.variance)))
                .fold(f64::INFINITY, f64::min)
        };
        assert!(min_var(&res.map) < min_var(&single));
    }

    #[test]
    fn corridor_run_tracks_constant_steps() {
        let (grid, kernel, mc, pc) = default_cfgs();
        let frames: Vec<FramePacket> = (0..12)
            .map(|k| {
                let pose =
                    PoseSE3::from_translation(Vector3::new(1.0 + 0.1 * k as f64, 2.0, 1.5));
                FramePacket {
                    seq: k,
                    timestamp: k as f64 * 0.1,
                    scan: room_scan(&pose, 200 + k as u64, 800, 0.01),
                }
            })
            .collect();
        let res = run_core(&frames, grid, kernel, &mc, &pc);
        // Relative to the frame-0 anchor the truth is a pure x march.
        for (k, (_, p)) in res.trajectory.iter().enumerate() {
            let truth = Vector3::new(0.1 * k as f64, 0.0, 0.0);
            let step_err = (p.translation - truth).norm();
            assert!(step_err < 0.02, "frame {k}: error {step_err}");
        }
    }

    #[test]
    fn integrate_poses_examples() {
        let core = PoseSE3::from_yaw(0.3);
        let subsequent = PoseSE3::new(
            UnitQuaternion::from_euler_angles(0.1, 0.0, -0.2),
            Vector3::new(1.0, 2.0, 3.0),
        );
        // Identity delta.
        let same = integrate_poses(&core, &core, &subsequent);
        assert!((same.translation - subsequent.translation).norm() < 1e-12);
        assert!(same.rotation.angle_to(&subsequent.rotation) < 1e-12);
        // Pure shift applied on the left.
        let shift = PoseSE3::from_translation(Vector3::new(0.1, 0.0, 0.0));
        let shifted = integrate_poses(&PoseSE3::identity(), &shift, &subsequent);
        assert!((shifted.translation - (subsequent.translation + Vector3::new(0.1, 0.0, 0.0)))
            .norm()
            < 1e-12);
    }

    #[test]
    fn integrate_poses_algebraic_identity_on_random_triples() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let mut rand_pose = || {
                PoseSE3::new(
                    UnitQuaternion::from_euler_angles(
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                        rng.random_range(-1.0..1.0),
                    ),
                    Vector3::new(
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                        rng.random_range(-5.0..5.0),
                    ),
                )
            };
            let core = rand_pose();
            let refined = rand_pose();
            let subsequent = rand_pose();
            let corrected = integrate_poses(&core, &refined, &subsequent);
            // inverse(refined) ∘ corrected == inverse(core) ∘ subsequent
            let lhs = refined.inverse().compose(&corrected);
            let rhs = core.inverse().compose(&subsequent);
            assert!((lhs.translation - rhs.translation).norm() < 1e-9);
            assert!(lhs.rotation.angle_to(&rhs.rotation) < 1e-9);
        }
    }

    #[test]
    fn refinement_disabled_is_pass_through() {
        let (grid, kernel, mc, pc) = default_cfgs();
        let frames: Vec<FramePacket> = (0..4)
            .map(|k| FramePacket {
                seq: k,
                timestamp: k as f64 * 0.1,
                scan: room_scan(
                    &PoseSE3::from_translation(Vector3::new(2.0, 2.0, 1.5)),
                    300 + k as u64,
                    200,
                    0.01,
                ),
            })
            .collect();
        let res = run_pipeline(&frames, grid, kernel, &mc, &pc);
        assert!(res.refined.is_none());
        let core = run_core(&frames, grid, kernel, &mc, &pc);
        for (a, b) in res.core.trajectory.iter().zip(&core.trajectory) {
            assert_eq!(a.1.translation, b.1.translation);
        }
    }

    #[test]
    fn refinement_with_unit_batches_and_same_budget_matches_core() {
        let (grid, kernel, mc, _) = default_cfgs();
        let pc = PipelineConfig {
            refine_batch: 1,
            refine_enabled: true,
            refine_outer_iters: PipelineConfig::default().core_outer_iters,
            ..PipelineConfig::default()
        };
        let frames: Vec<FramePacket> = (0..6)
            .map(|k| {
                let pose =
                    PoseSE3::from_translation(Vector3::new(2.0 + 0.05 * k as f64, 2.0, 1.5));
                FramePacket {
                    seq: k,
                    timestamp: k as f64 * 0.1,
                    scan: room_scan(&pose, 400 + k as u64, 2000, 0.01),
                }
            })
            .collect();
        let res = run_pipeline(&frames, grid, kernel, &mc, &pc);
        let refined = res.refined.unwrap();
        for ((_, c), (_, r)) in res.core.trajectory.iter().zip(&refined.trajectory) {
            let delta = c.compose(&r.inverse());
            assert!(
                delta.translation_norm() < 0.01,
                "refined deviates {}",
                delta.translation_norm()
            );
            assert!(delta.rotation_angle() < 0.01);
        }
    }

    #[test]
    fn bounded_queue_drops_oldest_and_never_blocks_producer() {
        let q = BoundedQueue::new(3);
        for i in 0..10 {
            q.push(i);
        }
        assert_eq!(q.dropped(), 7);
        q.close();
        assert_eq!(q.pop(), Some(7));
        assert_eq!(q.pop(), Some(8));
        assert_eq!(q.pop(), Some(9));
        assert_eq!(q.pop(), None);
    }

    #[test]
    fn threaded_run_keeps_every_core_frame() {
        let (grid, kernel, mc, _) = default_cfgs();
        let pc = PipelineConfig {
            refine_batch: 2,
            refine_enabled: true,
            ..PipelineConfig::default()
        };
        let frames: Vec<FramePacket> = (0..6)
            .map(|k| FramePacket {
                seq: k,
                timestamp: k as f64 * 0.1,
                scan: room_scan(
                    &PoseSE3::from_translation(Vector3::new(2.0, 2.0, 1.5)),
                    500 + k as u64,
                    200,
                    0.01,
                ),
            })
            .collect();
        let res = run_threaded(&frames, grid, kernel, &mc, &pc);
        // Every frame got a pose and a stats record: no core-frame drops.
        assert_eq!(res.core.trajectory.len(), frames.len());
        assert_eq!(res.core.stats.len(), frames.len());
        assert!(res.refined.is_some());
    }
}
