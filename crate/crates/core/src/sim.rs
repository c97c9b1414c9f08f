//! Deterministic synthetic scenarios: random-waypoint agents, corrupted detections
//! with appearance vectors, visibility under depth-ordered occlusion, and feature maps.
//!
//! All randomness comes from `ChaCha8Rng` streams derived from the seed, so output
//! is a pure function of the configuration.

use std::borrow::Cow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::embed::FeatureMap;
use crate::error::{Error, Result};
use crate::geometry::{BoundingBox, Detection};
use crate::metrics::GroundTruthFrame;
use crate::mtcl::{FrameSource, TrainingFrame};
use crate::vector::{cosine_similarity, l2_normalize, Embedding};

const STREAM_LATENTS: u64 = 1;
const STREAM_MOTION: u64 = 2;
const STREAM_DETECTIONS: u64 = 3;
const STREAM_MAPS: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_identities: usize,
    pub n_frames: usize,
    pub arena_width: f64,
    pub arena_height: f64,
    /// Waypoints per agent; agents cycle through them.
    pub waypoints: usize,
    pub speed_min: f64,
    pub speed_max: f64,
    pub box_width_min: f64,
    pub box_width_max: f64,
    /// Height divided by width.
    pub aspect_min: f64,
    pub aspect_max: f64,
    pub p_drop: f64,
    /// Extra drop probability at zero visibility.
    pub occlusion_drop_gain: f64,
    pub sigma_box: f64,
    pub sigma_emb: f64,
    /// When off, visibility is ignored for embeddings and dropout.
    pub occlusion: bool,
    pub embed_dim: usize,
    /// Maximum cosine similarity between two identity latents.
    pub latent_max_cosine: f64,
    /// Pixels per feature-map cell.
    pub fmap_stride: usize,
    pub fmap_channels: usize,
    /// Standard deviation of background cells.
    pub background_noise: f64,
    /// Standard deviation added to painted cells.
    pub signature_noise: f64,
    /// Signature strength falls to `1 − falloff` at the box border.
    pub profile_falloff: f64,
    /// Weight of the heading-dependent part of an identity's feature-map signature.
    pub pose_variation: f64,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            n_identities: 20,
            n_frames: 200,
            arena_width: 480.0,
            arena_height: 360.0,
            waypoints: 8,
            speed_min: 1.0,
            speed_max: 4.0,
            box_width_min: 24.0,
            box_width_max: 48.0,
            aspect_min: 2.0,
            aspect_max: 3.0,
            p_drop: 0.05,
            occlusion_drop_gain: 0.5,
            sigma_box: 1.0,
            sigma_emb: 0.05,
            occlusion: true,
            embed_dim: 32,
            latent_max_cosine: 0.5,
            fmap_stride: 8,
            fmap_channels: 16,
            background_noise: 0.3,
            signature_noise: 0.3,
            profile_falloff: 0.5,
            pose_variation: 0.0,
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    /// Perfect detections and embeddings: no dropout, jitter, noise or occlusion effects.
    pub fn noiseless(mut self) -> Self {
        self.p_drop = 0.0;
        self.occlusion_drop_gain = 0.0;
        self.sigma_box = 0.0;
        self.sigma_emb = 0.0;
        self.occlusion = false;
        self.background_noise = 0.0;
        self.signature_noise = 0.0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.n_identities == 0 || self.n_frames == 0 {
            return bad("scenario needs at least one identity and one frame".into());
        }
        for (name, p) in [
            ("p_drop", self.p_drop),
            ("occlusion_drop_gain", self.occlusion_drop_gain),
            ("profile_falloff", self.profile_falloff),
            ("pose_variation", self.pose_variation),
        ] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} must lie in [0, 1]"));
            }
        }
        for (name, s) in [
            ("sigma_box", self.sigma_box),
            ("sigma_emb", self.sigma_emb),
            ("background_noise", self.background_noise),
            ("signature_noise", self.signature_noise),
        ] {
            if !(s >= 0.0) {
                return bad(format!("{name} must be non-negative"));
            }
        }
        if !(self.latent_max_cosine > -1.0 && self.latent_max_cosine < 1.0) {
            return bad("latent_max_cosine must lie in (-1, 1)".into());
        }
        if !(0.0 < self.speed_min && self.speed_min <= self.speed_max) {
            return bad("speeds must satisfy 0 < speed_min <= speed_max".into());
        }
        if !(0.0 < self.box_width_min && self.box_width_min <= self.box_width_max) {
            return bad("box widths must satisfy 0 < min <= max".into());
        }
        if !(0.0 < self.aspect_min && self.aspect_min <= self.aspect_max) {
            return bad("aspects must satisfy 0 < min <= max".into());
        }
        if self.box_width_max >= self.arena_width || self.box_width_max * self.aspect_max >= self.arena_height {
            return bad("largest box must fit inside the arena".into());
        }
        if self.waypoints == 0 || self.embed_dim < 2 || self.fmap_stride == 0 || self.fmap_channels == 0 {
            return bad("waypoints, embed_dim (>= 2), fmap_stride and fmap_channels must be positive".into());
        }
        Ok(())
    }

    pub fn fmap_width(&self) -> usize {
        (self.arena_width / self.fmap_stride as f64).ceil() as usize
    }

    pub fn fmap_height(&self) -> usize {
        (self.arena_height / self.fmap_stride as f64).ceil() as usize
    }
}

/// One generated frame. `visibility[i]` belongs to `gt.objects[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulatedFrame {
    /// 1-based frame number.
    pub frame: u32,
    pub detections: Vec<Detection<f64>>,
    pub gt: GroundTruthFrame<f64>,
    pub visibility: Vec<f64>,
    /// Direction of travel of each agent, radians.
    pub headings: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub frames: Vec<SimulatedFrame>,
    /// Unit appearance latent per identity (identity `i + 1`).
    pub latents: Vec<Embedding<f64>>,
    /// Feature-map signatures per identity: base, seen head-on, seen side-on.
    pub signatures: Vec<[Vec<f64>; 3]>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn random_unit(rng: &mut ChaCha8Rng, dim: usize) -> Embedding<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| normal(rng)).collect();
        let n = l2_normalize(&v);
        if !n.degenerate {
            return n.vector;
        }
    }
}

/// Unit latents whose pairwise cosine never exceeds `max_cosine` (rejection sampling).
pub fn draw_latents(n: usize, dim: usize, max_cosine: f64, rng: &mut ChaCha8Rng) -> Result<Vec<Embedding<f64>>> {
    let mut out: Vec<Embedding<f64>> = Vec::with_capacity(n);
    let mut attempts = 0usize;
    while out.len() < n {
        attempts += 1;
        if attempts > 10_000 * n {
            return Err(Error::InvalidConfig(format!(
                "cannot place {n} latents in {dim} dimensions with cosine <= {max_cosine}"
            )));
        }
        let cand = random_unit(rng, dim);
        if out
            .iter()
            .all(|u| cosine_similarity(u, &cand).map(|c| c <= max_cosine).unwrap_or(false))
        {
            out.push(cand);
        }
    }
    Ok(out)
}

/// Area of `target` covered by the union of `occluders` (exact, by coordinate compression).
pub fn covered_area(target: &BoundingBox<f64>, occluders: &[BoundingBox<f64>]) -> f64 {
    let clipped: Vec<BoundingBox<f64>> = occluders
        .iter()
        .filter_map(|o| o.intersection(target))
        .filter(|o| o.area() > 0.0)
        .collect();
    if clipped.is_empty() {
        return 0.0;
    }
    let mut xs: Vec<f64> = clipped.iter().flat_map(|b| [b.left, b.right()]).collect();
    let mut ys: Vec<f64> = clipped.iter().flat_map(|b| [b.top, b.bottom()]).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    ys.sort_by(f64::total_cmp);
    ys.dedup();
    let mut area = 0.0;
    for xw in xs.windows(2) {
        for yw in ys.windows(2) {
            let (mx, my) = ((xw[0] + xw[1]) / 2.0, (yw[0] + yw[1]) / 2.0);
            if clipped
                .iter()
                .any(|b| b.left <= mx && mx <= b.right() && b.top <= my && my <= b.bottom())
            {
                area += (xw[1] - xw[0]) * (yw[1] - yw[0]);
            }
        }
    }
    area
}

/// Visible fraction of each box; lower indices are in front.
pub fn occlusion_oracle(boxes: &[BoundingBox<f64>]) -> Vec<f64> {
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| {
            let area = b.area();
            if area <= 0.0 {
                return 0.0;
            }
            (1.0 - covered_area(b, &boxes[..i]) / area).clamp(0.0, 1.0)
        })
        .collect()
}

struct Agent {
    width: f64,
    height: f64,
    speed: f64,
    center: (f64, f64),
    heading: f64,
    waypoints: Vec<(f64, f64)>,
    next: usize,
}

impl Agent {
    fn spawn(cfg: &ScenarioConfig, rng: &mut ChaCha8Rng) -> Self {
        let width = rng.random_range(cfg.box_width_min..=cfg.box_width_max);
        let height = width * rng.random_range(cfg.aspect_min..=cfg.aspect_max);
        let speed = rng.random_range(cfg.speed_min..=cfg.speed_max);
        let mut point = || {
            (
                rng.random_range(width / 2.0..=cfg.arena_width - width / 2.0),
                rng.random_range(height / 2.0..=cfg.arena_height - height / 2.0),
            )
        };
        let center = point();
        let waypoints: Vec<(f64, f64)> = (0..cfg.waypoints).map(|_| point()).collect();
        let heading = (waypoints[0].1 - center.1).atan2(waypoints[0].0 - center.0);
        Self {
            width,
            height,
            speed,
            center,
            heading,
            waypoints,
            next: 0,
        }
    }

    fn bbox(&self) -> BoundingBox<f64> {
        BoundingBox::from_center(self.center.0, self.center.1, self.width, self.height)
    }

    /// Moves `speed` pixels along the waypoint polyline.
    fn advance(&mut self) {
        let mut budget = self.speed;
        for _ in 0..=self.waypoints.len() {
            let target = self.waypoints[self.next];
            let (dx, dy) = (target.0 - self.center.0, target.1 - self.center.1);
            let dist = (dx * dx + dy * dy).sqrt();
            if dist > 0.0 {
                self.heading = dy.atan2(dx);
            }
            if dist > budget {
                self.center.0 += dx / dist * budget;
                self.center.1 += dy / dist * budget;
                return;
            }
            self.center = target;
            budget -= dist;
            self.next = (self.next + 1) % self.waypoints.len();
        }
    }
}

/// Generates the full scenario.
pub fn generate_scenario(cfg: &ScenarioConfig) -> Result<Scenario> {
    cfg.validate()?;
    let mut latent_rng = stream_rng(cfg.seed, STREAM_LATENTS);
    let latents = draw_latents(cfg.n_identities, cfg.embed_dim, cfg.latent_max_cosine, &mut latent_rng)?;
    let scale = (cfg.fmap_channels as f64).sqrt();
    let signatures: Vec<[Vec<f64>; 3]> = (0..cfg.n_identities)
        .map(|_| std::array::from_fn(|_| random_unit(&mut latent_rng, cfg.fmap_channels).0.iter().map(|v| v * scale).collect()))
        .collect();

    let mut motion_rng = stream_rng(cfg.seed, STREAM_MOTION);
    let mut agents: Vec<Agent> = (0..cfg.n_identities).map(|_| Agent::spawn(cfg, &mut motion_rng)).collect();
    let mut det_rng = stream_rng(cfg.seed, STREAM_DETECTIONS);

    let mut frames = Vec::with_capacity(cfg.n_frames);
    for t in 0..cfg.n_frames {
        if t > 0 {
            agents.iter_mut().for_each(Agent::advance);
        }
        let frame = t as u32 + 1;
        let boxes: Vec<BoundingBox<f64>> = agents.iter().map(Agent::bbox).collect();
        let visibility = occlusion_oracle(&boxes);
        let gt = GroundTruthFrame::new(
            frame,
            boxes.iter().enumerate().map(|(i, b)| (i as u32 + 1, *b)).collect(),
        );

        let mut detections = Vec::new();
        for (i, b) in boxes.iter().enumerate() {
            let vis = if cfg.occlusion { visibility[i] } else { 1.0 };
            let p = (cfg.p_drop + (1.0 - cfg.p_drop) * (1.0 - vis) * cfg.occlusion_drop_gain).clamp(0.0, 1.0);
            // Draw every random number unconditionally so one agent's outcome never shifts another's.
            let u: f64 = det_rng.random();
            let jitter: [f64; 4] = std::array::from_fn(|_| normal(&mut det_rng));
            let noise: Vec<f64> = (0..cfg.embed_dim).map(|_| normal(&mut det_rng)).collect();
            if u < p {
                continue;
            }
            let bbox = if cfg.sigma_box > 0.0 {
                let s = cfg.sigma_box;
                BoundingBox::new(
                    b.left + s * jitter[0],
                    b.top + s * jitter[1],
                    (b.width + s * jitter[2]).max(1.0),
                    (b.height + s * jitter[3]).max(1.0),
                )
            } else {
                *b
            };
            let embedding = observed_embedding(cfg, i, vis, &boxes, &latents, &noise);
            detections.push(
                Detection::new(frame, bbox, 0.5 + 0.5 * vis, embedding).with_identity(i as u32 + 1),
            );
        }
        frames.push(SimulatedFrame {
            frame,
            detections,
            gt,
            visibility,
            headings: agents.iter().map(|a| a.heading).collect(),
        });
    }
    Ok(Scenario {
        config: cfg.clone(),
        frames,
        latents,
        signatures,
    })
}

/// Index of the front agent covering the largest part of agent `i`.
fn main_occluder(i: usize, boxes: &[BoundingBox<f64>]) -> Option<usize> {
    (0..i)
        .filter_map(|j| boxes[j].intersection(&boxes[i]).map(|x| (j, x.area())))
        .filter(|&(_, a)| a > 0.0)
        .max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)))
        .map(|(j, _)| j)
}

fn observed_embedding(
    cfg: &ScenarioConfig,
    i: usize,
    vis: f64,
    boxes: &[BoundingBox<f64>],
    latents: &[Embedding<f64>],
    noise: &[f64],
) -> Embedding<f64> {
    let occluder = if vis < 1.0 { main_occluder(i, boxes) } else { None };
    if cfg.sigma_emb == 0.0 && occluder.is_none() {
        return latents[i].clone();
    }
    let mut v: Vec<f64> = latents[i].iter().map(|&x| vis * x).collect();
    if let Some(j) = occluder {
        for (a, &b) in v.iter_mut().zip(latents[j].iter()) {
            *a += (1.0 - vis) * b;
        }
    }
    for (a, &n) in v.iter_mut().zip(noise) {
        *a += cfg.sigma_emb * n;
    }
    l2_normalize(&v).vector
}

impl Scenario {
    /// Ground-truth frames, ready for evaluation.
    pub fn ground_truth(&self) -> Vec<GroundTruthFrame<f64>> {
        self.frames.iter().map(|f| f.gt.clone()).collect()
    }

    pub fn detections(&self) -> Vec<Vec<Detection<f64>>> {
        self.frames.iter().map(|f| f.detections.clone()).collect()
    }

    /// Fraction of ground-truth instances whose visibility is below `threshold`.
    pub fn occluded_fraction(&self, threshold: f64) -> f64 {
        let total: usize = self.frames.iter().map(|f| f.visibility.len()).sum();
        let low: usize = self
            .frames
            .iter()
            .map(|f| f.visibility.iter().filter(|&&v| v < threshold).count())
            .sum();
        if total == 0 {
            0.0
        } else {
            low as f64 / total as f64
        }
    }

    /// Rasterizes the feature map of frame index `t` (0-based).
    pub fn render_feature_map(&self, t: usize) -> Result<FeatureMap<f64>> {
        let frame = self.frames.get(t).ok_or(Error::IndexOutOfRange {
            index: t,
            len: self.frames.len(),
        })?;
        let painted: Vec<(BoundingBox<f64>, Vec<f64>)> = frame
            .gt
            .objects
            .iter()
            .zip(&frame.headings)
            .map(|((id, b), &heading)| (*b, self.signature(*id as usize - 1, heading)))
            .collect();
        Ok(render_feature_map(&painted, &self.config, frame.frame as u64))
    }

    /// Feature signature of identity index `i` while travelling along `heading`:
    /// `(1 − p)·base + p·(|cos θ|·front + |sin θ|·side)`.
    pub fn signature(&self, i: usize, heading: f64) -> Vec<f64> {
        let p = self.config.pose_variation;
        let [base, front, side] = &self.signatures[i];
        let (c, s) = (heading.cos().abs(), heading.sin().abs());
        base.iter()
            .zip(front)
            .zip(side)
            .map(|((&b, &f), &sd)| (1.0 - p) * b + p * (c * f + s * sd))
            .collect()
    }

    /// Training view over the scenario with boxes mapped to feature-map cells.
    pub fn training_source(&self) -> ScenarioSource<'_> {
        ScenarioSource { scenario: self }
    }

    /// Pre-renders every frame, trading memory for repeated training runs.
    pub fn training_frames(&self) -> Result<crate::mtcl::FrameSet<f64>> {
        let src = self.training_source();
        let frames = (0..src.num_frames())
            .map(|i| src.frame(i).map(Cow::into_owned))
            .collect::<Result<Vec<_>>>()?;
        Ok(crate::mtcl::FrameSet {
            frames,
            n_trajectories: self.config.n_identities,
        })
    }
}

/// Background noise plus each object's signature inside its box. Objects are listed
/// front to back and painted in reverse so occluders overwrite.
pub fn render_feature_map(
    objects: &[(BoundingBox<f64>, Vec<f64>)],
    cfg: &ScenarioConfig,
    frame_key: u64,
) -> FeatureMap<f64> {
    let (h, w, c) = (cfg.fmap_height(), cfg.fmap_width(), cfg.fmap_channels);
    let mut rng = stream_rng(cfg.seed, STREAM_MAPS + frame_key);
    let mut map = if cfg.background_noise > 0.0 {
        let bg = cfg.background_noise;
        FeatureMap::from_fn(h, w, c, |_, _, _| bg * normal(&mut rng))
    } else {
        FeatureMap::zeros(h, w, c)
    };
    let stride = cfg.fmap_stride as f64;
    for (b, sig) in objects.iter().rev() {
        let (cx, cy) = b.center();
        for y in 0..h {
            let py = (y as f64 + 0.5) * stride;
            if py < b.top || py > b.bottom() {
                continue;
            }
            for x in 0..w {
                let px = (x as f64 + 0.5) * stride;
                if px < b.left || px > b.right() {
                    continue;
                }
                let rx = 2.0 * (px - cx) / b.width.max(1e-9);
                let ry = 2.0 * (py - cy) / b.height.max(1e-9);
                let profile = 1.0 - cfg.profile_falloff * (rx * rx + ry * ry).min(1.0);
                let noise = cfg.signature_noise;
                for (v, &s) in map.cell_mut(x, y).iter_mut().zip(sig) {
                    *v = s * profile + if noise > 0.0 { noise * normal(&mut rng) } else { 0.0 };
                }
            }
        }
    }
    map
}

/// Lazily rendered training frames of a scenario.
#[derive(Debug, Clone, Copy)]
pub struct ScenarioSource<'a> {
    scenario: &'a Scenario,
}

impl FrameSource<f64> for ScenarioSource<'_> {
    fn num_frames(&self) -> usize {
        self.scenario.frames.len()
    }

    fn num_trajectories(&self) -> usize {
        self.scenario.config.n_identities
    }

    fn frame(&self, index: usize) -> Result<Cow<'_, TrainingFrame<f64>>> {
        let map = self.scenario.render_feature_map(index)?;
        let scale = 1.0 / self.scenario.config.fmap_stride as f64;
        let targets = self.scenario.frames[index]
            .gt
            .objects
            .iter()
            .map(|(id, b)| (*id as usize - 1, b.scaled(scale)))
            .collect();
        Ok(Cow::Owned(TrainingFrame { map, targets }))
    }
}
