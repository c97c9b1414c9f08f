//! Online tracker: three association stages (appearance, IoU, unconfirmed),
//! trajectory lifecycle and similarity-guided fusion of the stored representation.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::assignment::{solve_with_threshold, CostMatrix};
use crate::error::{Error, Result};
use crate::geometry::{iou, BoundingBox, Detection};
use crate::motion::{KalmanFilter, KalmanState, CHI2_95_4DOF};
use crate::scalar::Scalar;
use crate::vector::{cosine_similarity, l2_normalize, Embedding};

/// `max(0, mean cosine(z, m))` over the stored embeddings; 1 for an empty memory.
pub fn adaptive_beta<'a, T: Scalar>(
    z: &[T],
    memory: impl IntoIterator<Item = &'a [T]>,
    q: usize,
) -> T {
    let sims: Vec<T> = memory
        .into_iter()
        .map(|m| cosine_similarity(z, m).unwrap_or(T::zero()))
        .collect();
    let take = sims.len().min(q);
    if take == 0 {
        return T::one();
    }
    let recent = &sims[sims.len() - take..];
    let mean = recent.iter().copied().sum::<T>() / T::lit(take as f64);
    mean.max(T::zero()).min(T::one())
}

/// `normalize((1 − β) f + β z)`. At β = 1 the (unit) `z` is returned as is.
pub fn fuse<T: Scalar>(f: &[T], z: &[T], beta: T) -> Embedding<T> {
    if beta == T::one() {
        return Embedding(z.to_vec());
    }
    let mixed: Vec<T> = f
        .iter()
        .zip(z)
        .map(|(&a, &b)| (T::one() - beta) * a + beta * b)
        .collect();
    l2_normalize(&mixed).vector
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrackStatus {
    Unactivated,
    Active,
    Lost,
    Deleted,
}

impl TrackStatus {
    /// Edges of the lifecycle graph, self-loops included where they are legal.
    pub fn can_become(self, next: TrackStatus) -> bool {
        use TrackStatus::*;
        matches!(
            (self, next),
            (Unactivated, Active)
                | (Unactivated, Deleted)
                | (Active, Active)
                | (Active, Lost)
                | (Lost, Lost)
                | (Lost, Active)
                | (Lost, Deleted)
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BetaMode {
    Adaptive,
    Fixed(f64),
}

impl fmt::Display for BetaMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BetaMode::Adaptive => f.write_str("adaptive"),
            BetaMode::Fixed(b) => write!(f, "fixed:{b}"),
        }
    }
}

impl FromStr for BetaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("adaptive") {
            return Ok(BetaMode::Adaptive);
        }
        let value = s
            .strip_prefix("fixed:")
            .and_then(|v| v.parse::<f64>().ok())
            .filter(|v| (0.0..=1.0).contains(v))
            .ok_or_else(|| Error::InvalidConfig(format!("beta mode '{s}': expected adaptive or fixed:<0..1>")))?;
        Ok(BetaMode::Fixed(value))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    /// Cosine-distance threshold of the appearance stage.
    pub kappa1: f64,
    /// IoU-distance threshold for active trajectories.
    pub kappa2: f64,
    /// IoU-distance threshold for unconfirmed trajectories.
    pub kappa3: f64,
    /// Frames a trajectory may go unmatched before deletion.
    pub lambda: u32,
    /// Embedding memory length.
    pub q: usize,
    pub beta_mode: BetaMode,
    /// Squared Mahalanobis gate of the appearance stage; infinite disables gating.
    pub gate: f64,
    /// Trajectories born in the very first frame start active.
    pub activate_first_frame: bool,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            kappa1: 0.3,
            kappa2: 0.5,
            kappa3: 0.7,
            lambda: 15,
            q: 30,
            beta_mode: BetaMode::Adaptive,
            gate: CHI2_95_4DOF,
            activate_first_frame: true,
        }
    }
}

impl TrackerConfig {
    /// Stricter thresholds for crowded scenes.
    pub fn mot20() -> Self {
        Self {
            kappa1: 0.25,
            kappa3: 0.5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [("kappa1", self.kappa1), ("kappa2", self.kappa2), ("kappa3", self.kappa3)] {
            if !(0.0..=1.0).contains(&k) {
                return Err(Error::InvalidConfig(format!("{name} must lie in [0, 1]")));
            }
        }
        if self.lambda < 1 {
            return Err(Error::InvalidConfig("lambda must be at least 1".into()));
        }
        if self.q < 1 {
            return Err(Error::InvalidConfig("q must be at least 1".into()));
        }
        if let BetaMode::Fixed(b) = self.beta_mode {
            if !(0.0..=1.0).contains(&b) {
                return Err(Error::InvalidConfig("fixed beta must lie in [0, 1]".into()));
            }
        }
        if !(self.gate > 0.0) {
            return Err(Error::InvalidConfig("gate must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory<T> {
    pub id: u32,
    pub status: TrackStatus,
    pub kalman: KalmanState<T>,
    /// Fused appearance representation.
    pub representation: Embedding<T>,
    pub memory: VecDeque<Embedding<T>>,
    pub missing_frames: u32,
    pub last_box: BoundingBox<T>,
    pub history: Vec<(u32, BoundingBox<T>)>,
}

/// Which stage produced a match.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Appearance,
    Iou,
    Unactivated,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameResult {
    /// `(detection index, trajectory id, stage)`.
    pub matches: Vec<(usize, u32, Stage)>,
    pub created: Vec<u32>,
    pub deleted: Vec<u32>,
}

impl FrameResult {
    pub fn stage_count(&self, stage: Stage) -> usize {
        self.matches.iter().filter(|m| m.2 == stage).count()
    }
}

/// Emitted box of one trajectory in one frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackedBox<T> {
    pub id: u32,
    pub bbox: BoundingBox<T>,
    pub confidence: T,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameOutput<T> {
    pub frame: u32,
    pub boxes: Vec<TrackedBox<T>>,
}

#[derive(Debug, Clone)]
pub struct Tracker<T> {
    config: TrackerConfig,
    kf: KalmanFilter<T>,
    tracks: Vec<Trajectory<T>>,
    next_id: u32,
    frames_seen: u64,
}

impl<T: Scalar> Tracker<T> {
    pub fn new(config: TrackerConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            kf: KalmanFilter::default(),
            tracks: Vec::new(),
            next_id: 1,
            frames_seen: 0,
        })
    }

    pub fn config(&self) -> &TrackerConfig {
        &self.config
    }

    /// Live (not deleted) trajectories.
    pub fn trajectories(&self) -> &[Trajectory<T>] {
        &self.tracks
    }

    fn beta(&self, t: &Trajectory<T>, z: &[T]) -> T {
        match self.config.beta_mode {
            BetaMode::Adaptive => {
                adaptive_beta(z, t.memory.iter().map(|m| m.0.as_slice()), self.config.q)
            }
            BetaMode::Fixed(b) => T::lit(b),
        }
    }

    fn absorb(&mut self, ti: usize, det: &Detection<T>) -> Result<()> {
        let z = l2_normalize(&det.embedding).vector;
        let beta = self.beta(&self.tracks[ti], &z);
        let t = &mut self.tracks[ti];
        t.kalman = self.kf.update(&t.kalman, &det.bbox)?;
        t.representation = fuse(&t.representation, &z, beta);
        t.memory.push_back(z);
        while t.memory.len() > self.config.q {
            t.memory.pop_front();
        }
        t.missing_frames = 0;
        t.status = TrackStatus::Active;
        t.last_box = det.bbox;
        t.history.push((det.frame, det.bbox));
        Ok(())
    }

    fn stage(
        &self,
        dets: &[Detection<T>],
        free_dets: &[usize],
        pool: &[usize],
        kappa: f64,
        appearance: bool,
    ) -> Result<Vec<(usize, usize)>> {
        if free_dets.is_empty() || pool.is_empty() {
            return Ok(Vec::new());
        }
        let mut costs = CostMatrix::from_fn(free_dets.len(), pool.len(), |r, c| {
            let det = &dets[free_dets[r]];
            let t = &self.tracks[pool[c]];
            if appearance {
                T::one() - cosine_similarity(&det.embedding, &t.representation).unwrap_or(T::zero())
            } else {
                T::one() - iou(&det.bbox, &t.kalman.to_box())
            }
        });
        if appearance {
            let states: Vec<KalmanState<T>> = pool.iter().map(|&i| self.tracks[i].kalman.clone()).collect();
            let sub: Vec<Detection<T>> = free_dets.iter().map(|&i| dets[i].clone()).collect();
            costs = self.kf.gate_cost_matrix(&costs, &states, &sub, T::lit(self.config.gate))?;
        }
        let result = solve_with_threshold(&costs, T::lit(kappa));
        Ok(result
            .matches
            .into_iter()
            .map(|(r, c)| (free_dets[r], pool[c]))
            .collect())
    }

    /// Predicts every live trajectory, then associates one frame of detections.
    pub fn step(&mut self, dets: &[Detection<T>]) -> Result<FrameResult> {
        for t in &mut self.tracks {
            t.kalman = self.kf.predict(&t.kalman);
        }
        let mut result = FrameResult::default();
        let mut det_used = vec![false; dets.len()];
        let mut track_used = vec![false; self.tracks.len()];
        let stages = [
            (Stage::Appearance, self.config.kappa1),
            (Stage::Iou, self.config.kappa2),
            (Stage::Unactivated, self.config.kappa3),
        ];
        for (stage, kappa) in stages {
            let free: Vec<usize> = (0..dets.len()).filter(|&d| !det_used[d]).collect();
            let pool: Vec<usize> = (0..self.tracks.len())
                .filter(|&i| !track_used[i])
                .filter(|&i| match (stage, self.tracks[i].status) {
                    (Stage::Appearance, TrackStatus::Active | TrackStatus::Lost) => true,
                    (Stage::Iou, TrackStatus::Active) => true,
                    (Stage::Unactivated, TrackStatus::Unactivated) => true,
                    _ => false,
                })
                .collect();
            let pairs = self.stage(dets, &free, &pool, kappa, stage == Stage::Appearance)?;
            for (d, ti) in pairs {
                det_used[d] = true;
                track_used[ti] = true;
                self.absorb(ti, &dets[d])?;
                result.matches.push((d, self.tracks[ti].id, stage));
            }
        }

        for (ti, t) in self.tracks.iter_mut().enumerate() {
            if track_used[ti] {
                continue;
            }
            match t.status {
                TrackStatus::Unactivated => t.status = TrackStatus::Deleted,
                TrackStatus::Active | TrackStatus::Lost => {
                    t.missing_frames += 1;
                    t.status = if t.missing_frames > self.config.lambda {
                        TrackStatus::Deleted
                    } else {
                        TrackStatus::Lost
                    };
                }
                TrackStatus::Deleted => {}
            }
        }
        result.deleted = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Deleted)
            .map(|t| t.id)
            .collect();
        self.tracks.retain(|t| t.status != TrackStatus::Deleted);

        let first = self.frames_seen == 0;
        for (d, det) in dets.iter().enumerate() {
            if det_used[d] {
                continue;
            }
            let Ok(kalman) = self.kf.initiate(&det.bbox) else {
                continue;
            };
            let z = l2_normalize(&det.embedding).vector;
            let id = self.next_id;
            self.next_id += 1;
            let status = if first && self.config.activate_first_frame {
                TrackStatus::Active
            } else {
                TrackStatus::Unactivated
            };
            self.tracks.push(Trajectory {
                id,
                status,
                kalman,
                representation: z.clone(),
                memory: VecDeque::from([z]),
                missing_frames: 0,
                last_box: det.bbox,
                history: vec![(det.frame, det.bbox)],
            });
            result.created.push(id);
        }
        self.frames_seen += 1;
        Ok(result)
    }

    /// Active trajectories that were matched or created active in the latest frame.
    pub fn emitted(&self, frame: u32) -> Vec<TrackedBox<T>> {
        let mut out: Vec<TrackedBox<T>> = self
            .tracks
            .iter()
            .filter(|t| t.status == TrackStatus::Active && t.missing_frames == 0)
            .filter(|t| t.history.last().is_some_and(|h| h.0 == frame))
            .map(|t| TrackedBox {
                id: t.id,
                bbox: t.last_box,
                confidence: T::one(),
            })
            .collect();
        out.sort_by_key(|b| b.id);
        out
    }
}

/// Tracks a whole sequence. Frame `i` of the input is reported as frame `i + 1`.
pub fn run_sequence<T: Scalar>(
    frames: &[Vec<Detection<T>>],
    config: &TrackerConfig,
) -> Result<Vec<FrameOutput<T>>> {
    let mut tracker = Tracker::new(config.clone())?;
    let mut out = Vec::with_capacity(frames.len());
    for (i, dets) in frames.iter().enumerate() {
        let frame = i as u32 + 1;
        let dets: Vec<Detection<T>> = dets
            .iter()
            .map(|d| Detection { frame, ..d.clone() })
            .collect();
        tracker.step(&dets)?;
        out.push(FrameOutput {
            frame,
            boxes: tracker.emitted(frame),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn det(frame: u32, x: f64, y: f64, e: &[f64]) -> Detection<f64> {
        Detection::new(frame, BoundingBox::new(x, y, 20.0, 40.0), 1.0, Embedding(e.to_vec()))
    }

    #[test]
    fn beta_examples() {
        let z = [1.0, 0.0];
        assert_eq!(adaptive_beta(&z, [&[-1.0, 0.0][..], &[-0.5, 0.5][..]], 30), 0.0);
        assert_eq!(adaptive_beta(&z, [&z[..]], 30), 1.0);
        assert_eq!(adaptive_beta::<f64>(&z, [], 30), 1.0);
        let m: Vec<[f64; 2]> = [0.8f64, 0.6, 1.0]
            .iter()
            .map(|&c| [c, (1.0 - c * c).sqrt()])
            .collect();
        assert_relative_eq!(adaptive_beta(&z, m.iter().map(|v| &v[..]), 3), 0.8, epsilon = 1e-12);
        // Only the latest Q entries count.
        assert_relative_eq!(adaptive_beta(&z, m.iter().map(|v| &v[..]), 1), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn fuse_examples() {
        let f = [1.0, 0.0];
        let z = [0.0, 1.0];
        assert_eq!(fuse(&f, &z, 0.0).0, vec![1.0, 0.0]);
        assert_eq!(fuse(&f, &z, 1.0).0, vec![0.0, 1.0]);
        let h = fuse(&f, &z, 0.5);
        assert_relative_eq!(h[0], 0.5f64.sqrt(), epsilon = 1e-12);
        assert_relative_eq!(h[1], 0.5f64.sqrt(), epsilon = 1e-12);
    }

    #[test]
    fn presets_and_beta_parsing() {
        let c = TrackerConfig::mot20();
        assert_eq!((c.kappa1, c.kappa2, c.kappa3), (0.25, 0.5, 0.5));
        assert_eq!("fixed:0.9".parse::<BetaMode>().unwrap(), BetaMode::Fixed(0.9));
        assert_eq!("adaptive".parse::<BetaMode>().unwrap(), BetaMode::Adaptive);
        assert!("fixed:2".parse::<BetaMode>().is_err());
        assert!(TrackerConfig { lambda: 0, ..TrackerConfig::default() }.validate().is_err());
    }

    #[test]
    fn empty_frame_ages_everything() {
        let mut t = Tracker::<f64>::new(TrackerConfig::default()).unwrap();
        t.step(&[det(1, 0.0, 0.0, &[1.0, 0.0]), det(1, 100.0, 0.0, &[0.0, 1.0])]).unwrap();
        let r = t.step(&[]).unwrap();
        assert!(r.matches.is_empty());
        assert!(t.trajectories().iter().all(|t| t.missing_frames == 1 && t.status == TrackStatus::Lost));
    }

    #[test]
    fn deleted_after_lambda_plus_one_misses() {
        let cfg = TrackerConfig { lambda: 3, ..TrackerConfig::default() };
        let mut t = Tracker::<f64>::new(cfg).unwrap();
        t.step(&[det(1, 0.0, 0.0, &[1.0, 0.0])]).unwrap();
        for _ in 0..3 {
            assert!(t.step(&[]).unwrap().deleted.is_empty());
        }
        assert_eq!(t.step(&[]).unwrap().deleted, vec![1]);
        assert!(t.trajectories().is_empty());
    }

    #[test]
    fn unconfirmed_tracks_need_a_second_match() {
        let mut t = Tracker::<f64>::new(TrackerConfig::default()).unwrap();
        t.step(&[]).unwrap();
        let r = t.step(&[det(2, 0.0, 0.0, &[1.0, 0.0])]).unwrap();
        assert_eq!(r.created, vec![1]);
        assert_eq!(t.trajectories()[0].status, TrackStatus::Unactivated);
        assert!(t.emitted(2).is_empty());
        let r = t.step(&[det(3, 1.0, 0.0, &[1.0, 0.0])]).unwrap();
        assert_eq!(r.stage_count(Stage::Unactivated), 1);
        assert_eq!(t.emitted(3).len(), 1);
        // An unconfirmed track that misses once is dropped.
        t.step(&[det(4, 300.0, 0.0, &[0.0, 1.0])]).unwrap();
        let r = t.step(&[]).unwrap();
        assert_eq!(r.deleted, vec![2]);
    }

    #[test]
    fn appearance_stage_handles_clean_motion() {
        let mut t = Tracker::<f64>::new(TrackerConfig::default()).unwrap();
        let embs = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for f in 1..=20u32 {
            let dets: Vec<_> = (0..3)
                .map(|i| det(f, 50.0 * i as f64 + f as f64, 10.0, &embs[i]))
                .collect();
            let r = t.step(&dets).unwrap();
            if f > 1 {
                assert_eq!(r.stage_count(Stage::Appearance), 3);
                assert_eq!(r.matches.len(), 3);
            }
        }
        let ids: Vec<u32> = t.emitted(20).iter().map(|b| b.id).collect();
        assert_eq!(ids, vec![1, 2, 3]);
    }

    #[test]
    fn fixed_one_keeps_latest_embedding() {
        let cfg = TrackerConfig { beta_mode: BetaMode::Fixed(1.0), ..TrackerConfig::default() };
        let mut t = Tracker::<f64>::new(cfg).unwrap();
        t.step(&[det(1, 0.0, 0.0, &[1.0, 0.0])]).unwrap();
        let z = [0.8, 0.6];
        t.step(&[det(2, 0.0, 0.0, &z)]).unwrap();
        assert_eq!(t.trajectories()[0].representation, l2_normalize(&z).vector);
    }

    #[test]
    fn sequence_runs_are_deterministic() {
        assert!(run_sequence::<f64>(&[], &TrackerConfig::default()).unwrap().is_empty());
        let frames: Vec<Vec<Detection<f64>>> = (0..10)
            .map(|f| vec![det(0, 2.0 * f as f64, 0.0, &[1.0, 0.0])])
            .collect();
        let a = run_sequence(&frames, &TrackerConfig::default()).unwrap();
        let b = run_sequence(&frames, &TrackerConfig::default()).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|f| f.boxes.len() == 1 && f.boxes[0].id == 1));
    }

    proptest! {
        #[test]
        fn beta_in_unit_interval(
            z in prop::collection::vec(-1.0f64..1.0, 3),
            mem in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), 0..8),
        ) {
            let b = adaptive_beta(&z, mem.iter().map(|m| m.as_slice()), 30);
            prop_assert!((0.0..=1.0).contains(&b));
        }

        #[test]
        fn fuse_is_unit(
            f in prop::collection::vec(-1.0f64..1.0, 4),
            z in prop::collection::vec(-1.0f64..1.0, 4),
            beta in 0.0f64..=1.0,
        ) {
            let f = l2_normalize(&f).vector;
            let z = l2_normalize(&z).vector;
            let out = fuse(&f, &z, beta);
            let n = out.norm();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-9);
        }
    }
}
