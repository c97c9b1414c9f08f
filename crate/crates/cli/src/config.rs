//! Flat `key=value` run configuration covering the simulator, trainer and tracker.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use trajcon::embed::SamplingPattern;
use trajcon::mtcl::{TrainConfig, UpdateStrategy};
use trajcon::sim::ScenarioConfig;
use trajcon::{BetaMode, TrackerConfig};

use crate::io::parse_pattern;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunConfig {
    pub scenario: ScenarioConfig,
    pub train: TrainConfig,
    pub tracker: TrackerConfig,
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    value
        .trim()
        .parse()
        .map_err(|e| anyhow!("`{key}`: cannot parse `{value}`: {e}"))
}

fn pattern_name(p: SamplingPattern) -> &'static str {
    match p {
        SamplingPattern::Grid => "grid",
        SamplingPattern::Zero => "zero",
    }
}

impl RunConfig {
    /// Every key with its current value, in a fixed order. `seed` sets both the
    /// scenario and training seeds, so `train_seed` follows it.
    pub fn entries(&self) -> Vec<(&'static str, String)> {
        let s = &self.scenario;
        let t = &self.train;
        let k = &self.tracker;
        vec![
            ("seed", s.seed.to_string()),
            ("train_seed", t.seed.to_string()),
            ("n_identities", s.n_identities.to_string()),
            ("n_frames", s.n_frames.to_string()),
            ("arena_width", s.arena_width.to_string()),
            ("arena_height", s.arena_height.to_string()),
            ("waypoints", s.waypoints.to_string()),
            ("speed_min", s.speed_min.to_string()),
            ("speed_max", s.speed_max.to_string()),
            ("box_width_min", s.box_width_min.to_string()),
            ("box_width_max", s.box_width_max.to_string()),
            ("aspect_min", s.aspect_min.to_string()),
            ("aspect_max", s.aspect_max.to_string()),
            ("p_drop", s.p_drop.to_string()),
            ("occlusion_drop_gain", s.occlusion_drop_gain.to_string()),
            ("sigma_box", s.sigma_box.to_string()),
            ("sigma_emb", s.sigma_emb.to_string()),
            ("occlusion", s.occlusion.to_string()),
            ("embed_dim", s.embed_dim.to_string()),
            ("latent_max_cosine", s.latent_max_cosine.to_string()),
            ("fmap_stride", s.fmap_stride.to_string()),
            ("fmap_channels", s.fmap_channels.to_string()),
            ("background_noise", s.background_noise.to_string()),
            ("signature_noise", s.signature_noise.to_string()),
            ("profile_falloff", s.profile_falloff.to_string()),
            ("pose_variation", s.pose_variation.to_string()),
            ("alpha", t.alpha.to_string()),
            ("tau", t.tau.to_string()),
            ("n_k", t.n_k.to_string()),
            ("learning_rate", t.learning_rate.to_string()),
            ("epochs", t.epochs.to_string()),
            ("batch_size", t.batch_size.to_string()),
            ("strategy", t.strategy.to_string()),
            ("pattern", pattern_name(t.pattern).to_string()),
            ("hidden1", t.dims.hidden1.to_string()),
            ("hidden2", t.dims.hidden2.to_string()),
            ("pre_dim", t.dims.pre.to_string()),
            ("output_dim", t.dims.output.to_string()),
            ("offset_init_std", t.offset_init_std.to_string()),
            ("normalize_centers", t.normalize_centers.to_string()),
            ("exclude_zero_centers", t.exclude_zero_centers.to_string()),
            ("detection_loss", t.detection_loss.to_string()),
            ("kappa1", k.kappa1.to_string()),
            ("kappa2", k.kappa2.to_string()),
            ("kappa3", k.kappa3.to_string()),
            ("lambda", k.lambda.to_string()),
            ("q", k.q.to_string()),
            ("beta", k.beta_mode.to_string()),
            ("gate", k.gate.to_string()),
            ("activate_first_frame", k.activate_first_frame.to_string()),
        ]
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let s = &mut self.scenario;
        let t = &mut self.train;
        let k = &mut self.tracker;
        match key {
            "seed" => {
                s.seed = parse(key, value)?;
                t.seed = s.seed;
            }
            "train_seed" => t.seed = parse(key, value)?,
            "n_identities" => s.n_identities = parse(key, value)?,
            "n_frames" => s.n_frames = parse(key, value)?,
            "arena_width" => s.arena_width = parse(key, value)?,
            "arena_height" => s.arena_height = parse(key, value)?,
            "waypoints" => s.waypoints = parse(key, value)?,
            "speed_min" => s.speed_min = parse(key, value)?,
            "speed_max" => s.speed_max = parse(key, value)?,
            "box_width_min" => s.box_width_min = parse(key, value)?,
            "box_width_max" => s.box_width_max = parse(key, value)?,
            "aspect_min" => s.aspect_min = parse(key, value)?,
            "aspect_max" => s.aspect_max = parse(key, value)?,
            "p_drop" => s.p_drop = parse(key, value)?,
            "occlusion_drop_gain" => s.occlusion_drop_gain = parse(key, value)?,
            "sigma_box" => s.sigma_box = parse(key, value)?,
            "sigma_emb" => s.sigma_emb = parse(key, value)?,
            "occlusion" => s.occlusion = parse(key, value)?,
            "embed_dim" => s.embed_dim = parse(key, value)?,
            "latent_max_cosine" => s.latent_max_cosine = parse(key, value)?,
            "fmap_stride" => s.fmap_stride = parse(key, value)?,
            "fmap_channels" => s.fmap_channels = parse(key, value)?,
            "background_noise" => s.background_noise = parse(key, value)?,
            "signature_noise" => s.signature_noise = parse(key, value)?,
            "profile_falloff" => s.profile_falloff = parse(key, value)?,
            "pose_variation" => s.pose_variation = parse(key, value)?,
            "alpha" => t.alpha = parse(key, value)?,
            "tau" => t.tau = parse(key, value)?,
            "n_k" => t.n_k = parse(key, value)?,
            "learning_rate" => t.learning_rate = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "strategy" => t.strategy = parse::<UpdateStrategy>(key, value)?,
            "pattern" => t.pattern = parse_pattern(value.trim())?,
            "hidden1" => t.dims.hidden1 = parse(key, value)?,
            "hidden2" => t.dims.hidden2 = parse(key, value)?,
            "pre_dim" => t.dims.pre = parse(key, value)?,
            "output_dim" => t.dims.output = parse(key, value)?,
            "offset_init_std" => t.offset_init_std = parse(key, value)?,
            "normalize_centers" => t.normalize_centers = parse(key, value)?,
            "exclude_zero_centers" => t.exclude_zero_centers = parse(key, value)?,
            "detection_loss" => t.detection_loss = parse(key, value)?,
            "kappa1" => k.kappa1 = parse(key, value)?,
            "kappa2" => k.kappa2 = parse(key, value)?,
            "kappa3" => k.kappa3 = parse(key, value)?,
            "lambda" => k.lambda = parse(key, value)?,
            "q" => k.q = parse(key, value)?,
            "beta" => k.beta_mode = parse::<BetaMode>(key, value)?,
            "gate" => k.gate = parse(key, value)?,
            "activate_first_frame" => k.activate_first_frame = parse(key, value)?,
            other => bail!("unknown config key `{other}`"),
        }
        Ok(())
    }

    /// Applies `key=value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| anyhow!("line {}: expected key=value, found `{line}`", i + 1))?;
            self.set(key.trim(), value).with_context(|| format!("line {}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<()> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        self.apply_text(&text)
            .with_context(|| format!("in {}", path.display()))
    }

    /// Applies `key=value` command-line overrides.
    pub fn apply_overrides(&mut self, pairs: &[String]) -> Result<()> {
        for p in pairs {
            let (key, value) = p
                .split_once('=')
                .ok_or_else(|| anyhow!("override `{p}` is not key=value"))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut c = Self::default();
        c.apply_text(text)?;
        Ok(c)
    }

    /// Derived fields and cross-section checks.
    pub fn finalize(&mut self) -> Result<()> {
        self.train.dims.input = self.scenario.fmap_channels;
        self.scenario.validate()?;
        self.train.validate()?;
        self.tracker.validate()?;
        Ok(())
    }

    pub fn render(&self) -> String {
        let mut out = String::from("# effective config\n");
        for (k, v) in self.entries() {
            let _ = writeln!(out, "{k}={v}");
        }
        out
    }
}
