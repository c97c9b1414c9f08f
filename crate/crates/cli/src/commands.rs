//! Subcommand implementations. Each writes its files into an output directory and
//! returns whether its checks passed.

use std::borrow::Cow;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use trajcon::embed::{embed_target, FeatureMap};
use trajcon::gradcheck::{run_gradcheck, GradcheckConfig};
use trajcon::mtcl::{dump_embeddings, separation_ratio, train, FrameSource, TrainingFrame, UpdateStrategy};
use trajcon::sim::{generate_scenario, Scenario};
use trajcon::{evaluate, run_sequence, BetaMode, Detection, Embedding, GroundTruthFrame, Tracker, TrackerConfig};

use crate::config::RunConfig;
use crate::io::{
    group_by_frame, read_checkpoint, read_fmaps, read_mot, read_sidecar, write_checkpoint, write_fmaps,
    write_mot, write_sidecar, MotLine, SidecarRow,
};

pub const OUTPUT_DIR_ENV: &str = "TRAJCON_OUTPUT_DIR";

#[derive(Debug, Parser)]
#[command(name = "trajcon", version, about = "Synthetic multi-object tracking with contrastive appearance training")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

impl Cli {
    /// Parses an argument list whose first item is the program name.
    pub fn from_args<I, S>(args: I) -> std::result::Result<Self, clap::Error>
    where
        I: IntoIterator<Item = S>,
        S: Into<std::ffi::OsString> + Clone,
    {
        Self::try_parse_from(args)
    }
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a scenario: gt, detections, embedding sidecar, optional feature maps.
    Simulate(SimulateArgs),
    /// Train the embedding branch on a simulated scenario.
    Train(TrainArgs),
    /// Run the online tracker and write a MOTChallenge result file.
    Track(TrackArgs),
    /// Score a result file against ground truth.
    Evaluate(EvaluateArgs),
    /// Compare analytic gradients with finite differences.
    Gradcheck(GradcheckArgs),
    /// Measure tracker throughput in frames per second.
    Bench(BenchArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Flat key=value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Single override, repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Args)]
pub struct OutArgs {
    /// Output directory; falls back to $TRAJCON_OUTPUT_DIR, then `trajcon-out`.
    #[arg(long, short)]
    pub out: Option<PathBuf>,
}

impl OutArgs {
    pub fn resolve(&self) -> Result<PathBuf> {
        let dir = self
            .out
            .clone()
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("trajcon-out"));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(dir)
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Perfect detections and embeddings.
    #[arg(long)]
    pub noiseless: bool,
    /// Also write every frame's feature map to fmaps.bin.
    #[arg(long)]
    pub fmaps: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory written by `simulate`.
    #[arg(long)]
    pub scenario: PathBuf,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
    /// Training seed; the scenario keeps its own.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub strategy: Option<UpdateStrategy>,
}

#[derive(Debug, Args)]
pub struct TrackArgs {
    /// Scenario directory; supplies det.txt, det.emb and scenario.cfg.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Detection file; overrides the scenario's.
    #[arg(long)]
    pub det: Option<PathBuf>,
    /// Embedding sidecar; defaults to the detection file with extension `.emb`.
    #[arg(long)]
    pub embeddings: Option<PathBuf>,
    /// Compute embeddings with a trained model instead of reading a sidecar.
    #[arg(long, requires = "scenario")]
    pub checkpoint: Option<PathBuf>,
    /// Threshold preset applied before config and overrides.
    #[arg(long, value_parser = ["default", "mot20"])]
    pub preset: Option<String>,
    /// `adaptive` or `fixed:<beta>`.
    #[arg(long)]
    pub beta: Option<BetaMode>,
    #[command(flatten)]
    pub config: ConfigArgs,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub gt: PathBuf,
    #[arg(long)]
    pub result: PathBuf,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// Random configurations to check.
    #[arg(long, default_value_t = 100)]
    pub configs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Falsify one analytic gradient entry; the run must then fail.
    #[arg(long)]
    pub corrupt: bool,
    #[command(flatten)]
    pub out: OutArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub config: ConfigArgs,
    #[arg(long, default_value_t = 3)]
    pub repeat: usize,
}

/// Outcome of a command that ran to completion.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Ok,
    VerificationFailed,
}

/// Runs a parsed command, writing its report to `w`.
pub fn run(cli: Cli, w: &mut dyn Write) -> Result<Status> {
    match cli.command {
        Command::Simulate(a) => simulate(&a, w),
        Command::Train(a) => train_cmd(&a, w),
        Command::Track(a) => track(&a, w),
        Command::Evaluate(a) => evaluate_cmd(&a, w),
        Command::Gradcheck(a) => gradcheck(&a, w),
        Command::Bench(a) => bench(&a, w),
    }
}

fn load_config(base: RunConfig, args: &ConfigArgs) -> Result<RunConfig> {
    let mut cfg = base;
    if let Some(p) = &args.config {
        cfg.apply_file(p)?;
    }
    cfg.apply_overrides(&args.set)?;
    Ok(cfg)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn require(path: &Path) -> Result<&Path> {
    if !path.is_file() {
        bail!("missing input file {}", path.display());
    }
    Ok(path)
}

pub fn simulate(args: &SimulateArgs, w: &mut dyn Write) -> Result<Status> {
    let mut cfg = load_config(RunConfig::default(), &args.config)?;
    if let Some(seed) = args.seed {
        cfg.set("seed", &seed.to_string())?;
    }
    if args.noiseless {
        cfg.scenario = cfg.scenario.clone().noiseless();
    }
    cfg.finalize()?;
    let out = args.out.resolve()?;
    write!(w, "{}", cfg.render())?;

    let scenario = generate_scenario(&cfg.scenario)?;
    let mut gt = Vec::new();
    let mut det = Vec::new();
    let mut emb = Vec::new();
    for f in &scenario.frames {
        for (id, b) in &f.gt.objects {
            gt.push(MotLine::new(f.frame, i64::from(*id), b, 1.0));
        }
        for (i, d) in f.detections.iter().enumerate() {
            det.push(MotLine::new(f.frame, -1, &d.bbox, d.confidence));
            emb.push(SidecarRow {
                frame: f.frame,
                index: i,
                values: d.embedding.0.clone(),
            });
        }
    }
    write_mot(&out.join("gt.txt"), &gt)?;
    write_mot(&out.join("det.txt"), &det)?;
    write_sidecar(&out.join("det.emb"), cfg.scenario.embed_dim, &emb)?;
    if args.fmaps {
        let maps = (0..scenario.frames.len())
            .map(|t| Ok((scenario.frames[t].frame, scenario.render_feature_map(t)?)))
            .collect::<Result<Vec<_>>>()?;
        write_fmaps(&out.join("fmaps.bin"), &maps)?;
    }
    write_text(&out.join("scenario.cfg"), &cfg.render())?;
    writeln!(
        w,
        "simulated {} frames, {} identities: {} gt boxes, {} detections, {:.3} of gt instances below 0.3 visibility",
        scenario.frames.len(),
        cfg.scenario.n_identities,
        gt.len(),
        det.len(),
        scenario.occluded_fraction(0.3)
    )?;
    Ok(Status::Ok)
}

/// Targets from a gt file, feature maps from fmaps.bin when present and
/// otherwise re-rendered from the scenario.
struct FileSource {
    scenario: Scenario,
    maps: Option<Vec<FeatureMap<f64>>>,
    targets: Vec<Vec<(usize, trajcon::BoundingBox<f64>)>>,
}

impl FrameSource<f64> for FileSource {
    fn num_frames(&self) -> usize {
        self.targets.len()
    }

    fn num_trajectories(&self) -> usize {
        self.scenario.config.n_identities
    }

    fn frame(&self, index: usize) -> trajcon::Result<Cow<'_, TrainingFrame<f64>>> {
        let map = match &self.maps {
            Some(m) => m[index].clone(),
            None => self.scenario.render_feature_map(index)?,
        };
        Ok(Cow::Owned(TrainingFrame {
            map,
            targets: self.targets[index].clone(),
        }))
    }
}

fn load_scenario(dir: &Path) -> Result<(RunConfig, Scenario)> {
    let mut cfg = RunConfig::default();
    cfg.apply_file(require(&dir.join("scenario.cfg"))?)?;
    cfg.finalize()?;
    let scenario = generate_scenario(&cfg.scenario)?;
    Ok((cfg, scenario))
}

fn file_source(dir: &Path, scenario: Scenario) -> Result<FileSource> {
    let n = scenario.frames.len();
    let scale = 1.0 / scenario.config.fmap_stride as f64;
    let mut targets = vec![Vec::new(); n];
    for line in read_mot(require(&dir.join("gt.txt"))?)? {
        let t = line.frame as usize - 1;
        if t >= n || line.id < 1 || line.id as usize > scenario.config.n_identities {
            bail!("gt.txt line for frame {} id {} lies outside the scenario", line.frame, line.id);
        }
        targets[t].push((line.id as usize - 1, line.bbox().scaled(scale)));
    }
    let fmaps = dir.join("fmaps.bin");
    let maps = if fmaps.is_file() {
        let maps: Vec<FeatureMap<f64>> = read_fmaps(&fmaps)?.into_iter().map(|(_, m)| m).collect();
        if maps.len() != n {
            bail!("fmaps.bin holds {} frames, scenario has {n}", maps.len());
        }
        Some(maps)
    } else {
        None
    };
    Ok(FileSource {
        scenario,
        maps,
        targets,
    })
}

pub fn train_cmd(args: &TrainArgs, w: &mut dyn Write) -> Result<Status> {
    let (base, scenario) = load_scenario(&args.scenario)?;
    let mut cfg = load_config(base.clone(), &args.config)?;
    if let Some(seed) = args.seed {
        cfg.set("train_seed", &seed.to_string())?;
    }
    if let Some(e) = args.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = args.strategy {
        cfg.train.strategy = s;
    }
    cfg.finalize()?;
    if cfg.scenario != base.scenario {
        bail!("scenario keys cannot change at training time; re-run simulate instead");
    }
    let out = args.out.resolve()?;
    write!(w, "{}", cfg.render())?;

    let source = file_source(&args.scenario, scenario)?;
    let result = train(&source, &cfg.train)?;

    let metadata: Vec<(String, String)> = cfg.entries().into_iter().map(|(k, v)| (k.to_string(), v)).collect();
    write_checkpoint(&out.join("checkpoint.txt"), &result.model, cfg.train.pattern, &metadata)?;

    let mut csv = String::from("epoch,iteration,l_tcl,l_det,l_total,eta1,eta2\n");
    for r in &result.history {
        csv.push_str(&format!(
            "{},{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}\n",
            r.epoch, r.iteration, r.l_tcl, r.l_det, r.l_total, r.eta1, r.eta2
        ));
    }
    write_text(&out.join("loss.csv"), &csv)?;

    let dump = dump_embeddings(&source, &result.model, 1)?;
    let rows: Vec<SidecarRow> = dump
        .iter()
        .map(|r| SidecarRow {
            frame: r.frame as u32 + 1,
            index: r.trajectory + 1,
            values: r.embedding.0.clone(),
        })
        .collect();
    let dim = rows.first().map_or(cfg.train.n_k * cfg.train.dims.output, |r| r.values.len());
    write_sidecar(&out.join("embeddings.emb"), dim, &rows)?;
    write_text(&out.join("train.cfg"), &cfg.render())?;

    let pairs: Vec<(usize, &[f64])> = dump.iter().map(|r| (r.trajectory, r.embedding.0.as_slice())).collect();
    let ratio = separation_ratio(&pairs).map(|r| format!("{r:.4}")).unwrap_or_else(|e| format!("n/a ({e})"));
    writeln!(
        w,
        "trained {} epochs ({} iterations, strategy {}); final-epoch mean L_tcl {}; intra/inter distance ratio {ratio}",
        cfg.train.epochs,
        result.history.len(),
        cfg.train.strategy,
        cfg.train
            .epochs
            .checked_sub(1)
            .and_then(|e| result.epoch_mean_tcl(e))
            .map(|v| format!("{v:.4}"))
            .unwrap_or_else(|| "n/a".into()),
    )?;
    Ok(Status::Ok)
}

fn sidecar_detections(det_path: &Path, emb_path: &Path, n_frames: Option<usize>) -> Result<Vec<Vec<Detection<f64>>>> {
    let lines = read_mot(require(det_path)?)?;
    if !emb_path.is_file() {
        bail!("missing embedding sidecar {}", emb_path.display());
    }
    let (dim, rows) = read_sidecar(emb_path)?;
    let grouped = group_by_frame(&lines);
    let last = grouped.keys().next_back().copied().unwrap_or(0) as usize;
    let n = n_frames.unwrap_or(last).max(last);
    let mut frames: Vec<Vec<Detection<f64>>> = vec![Vec::new(); n];
    for (&frame, dets) in &grouped {
        frames[frame as usize - 1] = dets
            .iter()
            .map(|l| Detection::new(frame, l.bbox(), l.conf.clamp(0.0, 1.0), Embedding::zeros(dim)))
            .collect();
    }
    let mut seen: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.len()]).collect();
    for r in rows {
        let slot = (r.frame as usize)
            .checked_sub(1)
            .and_then(|t| frames.get_mut(t))
            .and_then(|f| f.get_mut(r.index));
        let Some(d) = slot else {
            bail!("sidecar row frame {} index {} has no detection", r.frame, r.index);
        };
        d.embedding = Embedding(r.values);
        seen[r.frame as usize - 1][r.index] = true;
    }
    for (t, s) in seen.iter().enumerate() {
        if let Some(i) = s.iter().position(|x| !x) {
            bail!("sidecar lacks an embedding for frame {} detection {i}", t + 1);
        }
    }
    Ok(frames)
}

fn model_detections(det_path: &Path, checkpoint: &Path, scenario: &Scenario) -> Result<Vec<Vec<Detection<f64>>>> {
    let ckpt = read_checkpoint(require(checkpoint)?)?;
    let lines = read_mot(require(det_path)?)?;
    let grouped = group_by_frame(&lines);
    let scale = 1.0 / scenario.config.fmap_stride as f64;
    let mut frames: Vec<Vec<Detection<f64>>> = vec![Vec::new(); scenario.frames.len()];
    for (&frame, dets) in &grouped {
        let t = frame as usize - 1;
        if t >= frames.len() {
            bail!("detection frame {frame} lies past the scenario end");
        }
        let map = scenario.render_feature_map(t)?;
        frames[t] = dets
            .iter()
            .map(|l| {
                let e = embed_target(&map, &l.bbox().scaled(scale), &ckpt.model)?;
                Ok(Detection::new(frame, l.bbox(), l.conf.clamp(0.0, 1.0), e))
            })
            .collect::<Result<_>>()?;
    }
    Ok(frames)
}

pub fn track(args: &TrackArgs, w: &mut dyn Write) -> Result<Status> {
    let base = match args.preset.as_deref() {
        Some("mot20") => RunConfig {
            tracker: TrackerConfig::mot20(),
            ..RunConfig::default()
        },
        _ => RunConfig::default(),
    };
    let mut cfg = load_config(base, &args.config)?;
    if let Some(b) = args.beta {
        cfg.tracker.beta_mode = b;
    }
    cfg.finalize()?;

    let det_path = match (&args.det, &args.scenario) {
        (Some(p), _) => p.clone(),
        (None, Some(dir)) => dir.join("det.txt"),
        (None, None) => bail!("track needs --det or --scenario"),
    };
    let frames = match &args.checkpoint {
        Some(ckpt) => {
            let dir = args.scenario.as_ref().expect("clap enforces --scenario");
            let (_, scenario) = load_scenario(dir)?;
            model_detections(&det_path, ckpt, &scenario)?
        }
        None => {
            let emb_path = match (&args.embeddings, &args.det, &args.scenario) {
                (Some(p), _, _) => p.clone(),
                (None, Some(d), _) => d.with_extension("emb"),
                (None, None, Some(dir)) => dir.join("det.emb"),
                (None, None, None) => unreachable!("checked above"),
            };
            let n_frames = match &args.scenario {
                Some(dir) => Some(load_scenario(dir)?.0.scenario.n_frames),
                None => None,
            };
            sidecar_detections(&det_path, &emb_path, n_frames)?
        }
    };
    let out = args.out.resolve()?;
    write!(w, "{}", cfg.render())?;

    let output = run_sequence(&frames, &cfg.tracker)?;
    let mut lines = Vec::new();
    for f in &output {
        for b in &f.boxes {
            lines.push(MotLine::new(f.frame, i64::from(b.id), &b.bbox, b.confidence));
        }
    }
    write_mot(&out.join("results.txt"), &lines)?;
    write_text(&out.join("track.cfg"), &cfg.render())?;
    let ids: std::collections::BTreeSet<i64> = lines.iter().map(|l| l.id).collect();
    writeln!(
        w,
        "tracked {} frames: {} boxes over {} trajectories (beta {})",
        output.len(),
        lines.len(),
        ids.len(),
        cfg.tracker.beta_mode
    )?;
    Ok(Status::Ok)
}

fn to_frames(lines: &[MotLine], what: &str) -> Result<Vec<GroundTruthFrame<f64>>> {
    group_by_frame(lines)
        .into_iter()
        .map(|(frame, ls)| {
            let objects = ls
                .iter()
                .map(|l| {
                    if l.id < 1 {
                        bail!("{what} frame {frame} has a line without an identity");
                    }
                    Ok((l.id as u32, l.bbox()))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(GroundTruthFrame::new(frame, objects))
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct MetricsJson {
    idf1: f64,
    mota: f64,
    motp: f64,
    mt: f64,
    ml: f64,
    fp: usize,
    #[serde(rename = "fn")]
    fn_: usize,
    ids: usize,
    gt: usize,
    idtp: usize,
}

pub fn evaluate_cmd(args: &EvaluateArgs, w: &mut dyn Write) -> Result<Status> {
    let gt = to_frames(&read_mot(require(&args.gt)?)?, "gt")?;
    let hyp = to_frames(&read_mot(require(&args.result)?)?, "result")?;
    let r = evaluate(&gt, &hyp)?;
    let out = args.out.resolve()?;
    let json = MetricsJson {
        idf1: r.idf1,
        mota: r.mota,
        motp: r.motp,
        mt: r.mt,
        ml: r.ml,
        fp: r.fp,
        fn_: r.fn_,
        ids: r.ids,
        gt: r.gt_total,
        idtp: r.idtp,
    };
    write_text(&out.join("metrics.json"), &(serde_json::to_string_pretty(&json)? + "\n"))?;
    let table = format!(
        "{:>8} {:>8} {:>8} {:>6} {:>6} {:>6} {:>6} {:>6}\n{:>8.4} {:>8.4} {:>8.4} {:>6.3} {:>6.3} {:>6} {:>6} {:>6}\n",
        "IDF1", "MOTA", "MOTP", "MT", "ML", "FP", "FN", "IDS", r.idf1, r.mota, r.motp, r.mt, r.ml, r.fp, r.fn_, r.ids
    );
    write_text(&out.join("metrics.txt"), &table)?;
    write!(w, "{table}")?;
    Ok(Status::Ok)
}

pub fn gradcheck(args: &GradcheckArgs, w: &mut dyn Write) -> Result<Status> {
    let cfg = GradcheckConfig {
        n_configs: args.configs,
        seed: args.seed,
        corrupt: args.corrupt,
        ..GradcheckConfig::default()
    };
    let report = run_gradcheck(&cfg)?;
    let out = args.out.resolve()?;
    let mut text = format!(
        "configs={} seed={} corrupt={}\n{:<16} {:>8} {:>8} {:>12} {:>12}\n",
        report.configs, args.seed, args.corrupt, "parameter", "checked", "failed", "max_rel_err", "max_abs_err"
    );
    for p in &report.parameters {
        text.push_str(&format!(
            "{:<16} {:>8} {:>8} {:>12.3e} {:>12.3e}\n",
            p.name, p.entries_checked, p.failures, p.max_relative_error, p.max_abs_error
        ));
    }
    text.push_str(&format!("{}: {} failures\n", if report.passed() { "PASS" } else { "FAIL" }, report.failures()));
    write_text(&out.join("gradcheck.txt"), &text)?;
    write!(w, "{text}")?;
    Ok(if report.passed() { Status::Ok } else { Status::VerificationFailed })
}

pub fn bench(args: &BenchArgs, w: &mut dyn Write) -> Result<Status> {
    let mut cfg = load_config(RunConfig::default(), &args.config)?;
    cfg.finalize()?;
    let scenario = generate_scenario(&cfg.scenario)?;
    let frames = scenario.detections();
    let n_dets: usize = frames.iter().map(Vec::len).sum();
    let mut best = f64::INFINITY;
    for _ in 0..args.repeat.max(1) {
        let mut tracker: Tracker<f64> = Tracker::new(cfg.tracker.clone())?;
        let start = Instant::now();
        for dets in &frames {
            tracker.step(dets)?;
        }
        best = best.min(start.elapsed().as_secs_f64());
    }
    writeln!(
        w,
        "{} frames, {} detections, {} identities: {:.1} frames/sec (best of {})",
        frames.len(),
        n_dets,
        cfg.scenario.n_identities,
        frames.len() as f64 / best.max(1e-12),
        args.repeat.max(1)
    )?;
    Ok(Status::Ok)
}
